"""Classical baselines on a dataset with planted communities.

Users in block b only consume items from block b, so anything that learns
co-consumption should leave global popularity far behind.
"""

import numpy as np

from recllm_audit.baselines import (
    InteractionMatrix, auc, bpr_fit, item_knn_fit, popularity, recommend_all, top_pop, validation_ndcg,
)
from recllm_audit.dataset import chrono_split
from recllm_audit.synthetic import block_of_item, separable

for n_blocks in (2, 4):
    ds = separable(n_users=200, n_items=200, n_blocks=n_blocks, seed=0)
    split = chrono_split(ds, (0.8, 0.2))
    train = InteractionMatrix(split.train, item_ids=ds.catalog.sorted_ids())
    truth = {u: {x.item_id for x in xs} for u, xs in split.test.by_user().items()}
    users = sorted(truth)

    knn = item_knn_fit(train, k_neighbors=100)
    bpr = bpr_fit(train, dim=32, epochs=50)
    print(f"{n_blocks} blocks")
    for name, recs in (("TopPop", top_pop(train, 10, users=users)),
                       ("ItemKNN", recommend_all("itemknn", knn, users, 10)),
                       ("BPR-MF", recommend_all("bpr", bpr, users, 10))):
        print(f"  {name:8} NDCG@10 {validation_ndcg(recs, truth):.3f}")

    # Scoring own-block items first, by popularity, is as good as it gets here,
    # and with few blocks many unseen own-block items still rank below held-out ones.
    blocks = np.array([block_of_item(i, 200, n_blocks) for i in train.item_ids])
    pop = popularity(train)
    ceiling = auc(lambda ui: (blocks == (train.user_ids[ui] - 1) % n_blocks) * 1e6 + pop, train, truth)
    print(f"  BPR held-out AUC {auc(bpr.scores, train, truth):.3f}  (block-aware ceiling {ceiling:.3f})\n")

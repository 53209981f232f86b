"""Score one recommendation list by hand, then a whole population.

Run with ``python demos/01_scoring_a_list.py``.
"""

from recllm_audit.dataset import Catalog, Item
from recllm_audit.metrics import (
    average_rank_at_k, coverage, count_vector, entropy, gini, hhi, hit_rate_at_k, ndcg_at_k, recall_at_k,
    temporal_stats,
)
from recllm_audit.stats import bootstrap_mean_ci

catalog = Catalog(Item(i, f"Film {i}", 1970 + 3 * i) for i in range(1, 13))

# A reply resolved to item ids, and the user's held-out items.
recs = [4, 9, 1, 7, 2]
truth = {1, 2, 11}
print("one user, k = 5")
print(f"  NDCG     {ndcg_at_k(recs, truth, 5):.4f}")
print(f"  Recall   {recall_at_k(recs, truth, 5):.4f}   (2 of 3 held-out items found)")
print(f"  HitRate  {hit_rate_at_k(recs, truth, 5):.4f}   (hits / k)")
print(f"  AvgRank  {average_rank_at_k(recs, truth, 5)}      (hits sit at ranks 3 and 5)")

# Exposure across a handful of users: who gets recommended at all?
lists = [[4, 9, 1, 7, 2], [4, 9, 3, 7, 2], [4, 1, 9, 12, 5], [4, 9, 7, 2, 6]]
counts = count_vector(lists)
print("\nfour users")
print(f"  Gini {gini(counts):.4f}  HHI {hhi(counts):.4f}  entropy {entropy(counts):.4f} nats")
print(f"  catalog coverage {coverage(lists, catalog):.3f}")
years = temporal_stats(lists, catalog)
print(f"  release years: median {years.median_year}, std {years.std_year:.2f}")

# Per-user NDCG values become a mean with a percentile interval.
per_user = [0.31, 0.0, 0.52, 0.12, 0.0, 0.44, 0.27, 0.09]
ci = bootstrap_mean_ci(per_user, B=2000, seed=0)
print(f"\nbootstrap over {len(per_user)} users: mean {ci.mean_of_means:.4f}, "
      f"95% interval ({ci.ci_low:.4f}, {ci.ci_high:.4f}) from {ci.B} draws of {ci.rng}")

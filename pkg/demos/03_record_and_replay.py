"""Record provider answers once, then replay them with no network at all.

The "live" side here is the mock provider so the script runs anywhere; the
recording wrapper is the same one that would sit in front of a real endpoint.
"""

import tempfile
from pathlib import Path

from recllm_audit.llmclient import CompletionParams, CostLedger, MockProvider, ReplayProvider, complete, ledger_summary
from recllm_audit.profile import sample_context
from recllm_audit.promptgen import build_topk_prompt
from recllm_audit.synthetic import movielens_like

ds = movielens_like(n_users=5, n_items=80, seed=3)
params = CompletionParams(model="gpt-3.5-turbo", temperature=0.0, max_tokens=800)
history = ds.by_user()

with tempfile.TemporaryDirectory() as tmp:
    store = Path(tmp) / "replay.jsonl"
    recorder = ReplayProvider(store, inner=MockProvider(ds.catalog, seed=0))
    ledger = CostLedger(alpha=0.02)
    for user in sorted(history):
        bundle = build_topk_prompt(sample_context(history[user], "frequent", 5), ds.catalog, "S1", "R1")
        complete(bundle, params, recorder, ledger, user_id=user, cell="S1_R1_E0")
    print(f"recorded {len(store.read_text().splitlines())} exchanges to {store.name}")
    print("cost summary:", {k: v for k, v in ledger_summary(ledger).items() if k in ("calls", "total_tokens",
                                                                                       "total_cost")})

    # A strict replay provider has no inner provider: any unseen prompt raises.
    replay = ReplayProvider(store, strict=True)
    user = sorted(history)[0]
    bundle = build_topk_prompt(sample_context(history[user], "frequent", 5), ds.catalog, "S1", "R1")
    answer = replay.complete(bundle, params)
    print(f"\nreplayed answer for user {user} (tag {answer.provider_tag}):")
    print("\n".join("  " + line for line in answer.text.splitlines()[:3]), "\n  ...")

    other = build_topk_prompt(sample_context(history[user], "frequent", 5), ds.catalog, "S7", "R1")
    try:
        replay.complete(other, params)
    except Exception as exc:  # CacheMissError
        print(f"\nan unrecorded prompt fails loudly: {type(exc).__name__}: {exc}")

"""A complete offline audit from a config file, then a rebuild from transcripts.

Equivalent CLI session::

    recllm-audit run --config demos/configs/topk_mock.yaml --out /tmp/audit
    recllm-audit report --out /tmp/audit
    recllm-audit recompute --out /tmp/audit
"""

import json
import tempfile
from pathlib import Path

from recllm_audit.runner import load_config, recompute, run_experiment

config = load_config(Path(__file__).parent / "configs" / "topk_mock.yaml")

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "audit"
    result = run_experiment(config, out_dir=out)
    print(f"{len(result.manifest['cells'])} cells, {result.calls_made} completion calls")
    print((out / "report" / "tables.md").read_text())

    # Transcripts are the record; everything else can be thrown away and rebuilt.
    before = (out / "report" / "tables.md").read_bytes()
    for metrics in (out / "metrics").glob("*.csv"):
        metrics.unlink()
    recompute(out)
    print("rebuilt report identical:", (out / "report" / "tables.md").read_bytes() == before)
    print("cost:", json.loads((out / "cost.json").read_text())["total_cost"])

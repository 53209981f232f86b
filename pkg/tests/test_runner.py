import json
import subprocess

import pytest

from recllm_audit.errors import ConfigError, ProviderError
from recllm_audit.llmclient import CostLedger, MockProvider, ledger_summary
from recllm_audit.runner import (
    ExperimentConfig, file_address, git_blob_sha1, load_config, prepare, read_transcript, recompute,
    run_experiment,
)


def base_config(**sections):
    data = {
        "dataset": {"synthetic": {"kind": "movielens_like", "n_users": 12, "n_items": 80, "seed": 1},
                    "split": [0.8, 0.2]},
        "experiment": {"kind": "topk", "scenarios": ["S1", "S2"]},
        "provider": {"kind": "mock", "seed": 0},
        "stats": {"B": 50, "seed": 0, "repetitions": 2},
    }
    for name, values in sections.items():
        data[name] = {**data.get(name, {}), **values}
    return data


def tree(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


class CountingProvider:
    """Wraps a provider; optionally raises on chosen calls."""

    tag = "counting"

    def __init__(self, inner, fail=None):
        self.inner, self.calls, self.fail = inner, 0, fail or (lambda n, bundle: None)

    def complete(self, bundle, params, repetition=0):
        self.calls += 1
        exc = self.fail(self.calls, bundle)
        if exc is not None:
            raise exc
        return self.inner.complete(bundle, params, repetition)


def mock_for(config):
    prepared = prepare(config)
    return MockProvider(prepared.catalog, k=config.experiment.list_length, seed=config.provider.seed)


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="tempreature"):
            ExperimentConfig.from_dict(base_config(provider={"tempreature": 0.0}))
        with pytest.raises(ConfigError, match="section"):
            ExperimentConfig.from_dict({**base_config(), "extras": {}})

    @pytest.mark.parametrize("bad", [
        {"experiment": {"scenarios": ["S9"]}},
        {"experiment": {"roles": ["R7"]}},
        {"experiment": {"explicit": True, "scenarios": ["S1"]}},
        {"provider": {"kind": "replay"}},
        {"provider": {"temperature": -1.0}},
        {"matcher": {"threshold": 1.5}},
        {"stats": {"repetitions": 0}},
        {"dataset": {"split": [0.5, 0.4]}},
    ])
    def test_invalid_matrix_aborts_before_any_call(self, tmp_path, bad):
        provider = CountingProvider(None)
        with pytest.raises(ConfigError):
            config = ExperimentConfig.from_dict(base_config(**bad))
            run_experiment(config, provider=provider, out_dir=tmp_path / "r")
        assert provider.calls == 0 and not (tmp_path / "r").exists()

    def test_yaml_and_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("dataset:\n  synthetic: {kind: separable, n_users: 10}\n  split: [0.8, 0.2]\n", encoding="utf-8")
        config = load_config(path, {"provider.seed": 9})
        assert config.provider.seed == 9 and config.dataset.synthetic["kind"] == "separable"

    def test_cell_ids(self):
        config = ExperimentConfig.from_dict(base_config(experiment={"scenarios": ["S1", "S3"], "roles": ["R0", "R1"],
                                                                    "explicit": True}))
        assert [c.cell_id for c in config.cells()] == ["S1_R0_E0", "S1_R1_E0", "S3_R0_E0", "S3_R1_E0",
                                                       "S3_R0_E0_explicit", "S3_R1_E0_explicit"]

    def test_hash_ignores_output_dir(self):
        a = ExperimentConfig.from_dict(base_config(output={"dir": "x"}))
        b = ExperimentConfig.from_dict(base_config(output={"dir": "y"}))
        assert a.config_hash() == b.config_hash()


class TestRun:
    def test_layout_and_manifest_addresses(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config())
        result = run_experiment(config, out_dir=tmp_path)
        files = tree(tmp_path)
        for rel in ("manifest.json", "config.json", "cost.json", "transcripts/S1_R0_E0/0.jsonl",
                    "transcripts/S2_R0_E0/1.jsonl", "metrics/S1_R0_E0.csv", "report/tables.md",
                    "report/tables.csv", "report/tables.json", "longtail/S2_R0_E0.csv", "genres/S1_R0_E0.csv"):
            assert rel in files
        m = result.manifest
        assert {e["status"] for e in m["cells"].values()} == {"complete"}
        for entry in m["cells"].values():
            for ref in entry["transcripts"].values():
                assert file_address(tmp_path / ref["path"]) == ref["address"]
        for rel, address in m["outputs"].items():
            assert git_blob_sha1(files[rel]) == address

    def test_address_matches_git(self, tmp_path):
        path = tmp_path / "blob.txt"
        path.write_bytes("päper\n".encode())
        git = subprocess.run(["git", "hash-object", str(path)], capture_output=True, text=True, check=True)
        assert file_address(path) == git.stdout.strip()

    def test_call_count_and_ledger(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config())
        result = run_experiment(config, out_dir=tmp_path)
        n_users = len(prepare(config).users)
        assert result.calls_made == n_users * 2 * 2 == result.ledger.n_calls

    def test_two_runs_byte_identical(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config(baselines={"models": ["toppop", "itemknn"]}))
        run_experiment(config, out_dir=tmp_path / "a")
        run_experiment(config, out_dir=tmp_path / "b")
        assert tree(tmp_path / "a") == tree(tmp_path / "b")

    def test_mock_repetitions_have_zero_std(self, tmp_path):
        result = run_experiment(ExperimentConfig.from_dict(base_config(stats={"repetitions": 3})), out_dir=tmp_path)
        doc = json.loads((tmp_path / "report" / "tables.json").read_text())
        assert doc["stability"] and all(s["std"] == 0.0 for s in doc["stability"])
        assert result.calls_made > 0

    def test_refuses_to_overwrite(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config())
        run_experiment(config, out_dir=tmp_path)
        with pytest.raises(ConfigError):
            run_experiment(config, out_dir=tmp_path)
        other = ExperimentConfig.from_dict(base_config(provider={"seed": 4}))
        with pytest.raises(ConfigError, match="differs"):
            run_experiment(other, out_dir=tmp_path, resume=True)

    def test_resume_completed_makes_no_calls(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config())
        run_experiment(config, out_dir=tmp_path)
        before = tree(tmp_path)
        provider = CountingProvider(mock_for(config))
        run_experiment(config, provider=provider, out_dir=tmp_path, resume=True)
        assert provider.calls == 0 and tree(tmp_path) == before

    @pytest.mark.parametrize("stop_at", [1, 7, 30])
    def test_interrupted_then_resumed_equals_uninterrupted(self, tmp_path, stop_at):
        config = ExperimentConfig.from_dict(base_config(provider={"concurrency": 1}))
        run_experiment(config, out_dir=tmp_path / "clean")

        interrupt = lambda n, _b: KeyboardInterrupt() if n == stop_at else None  # noqa: E731
        with pytest.raises(KeyboardInterrupt):
            run_experiment(config, provider=CountingProvider(mock_for(config), interrupt), out_dir=tmp_path / "resumed")
        manifest = json.loads((tmp_path / "resumed" / "manifest.json").read_text())
        assert "running" in {e["status"] for e in manifest["cells"].values()}
        run_experiment(config, out_dir=tmp_path / "resumed", resume=True)
        assert tree(tmp_path / "clean") == tree(tmp_path / "resumed")

    def test_torn_transcript_line_is_redone(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config(provider={"concurrency": 1}))
        run_experiment(config, out_dir=tmp_path / "clean")
        with pytest.raises(KeyboardInterrupt):
            run_experiment(config, provider=CountingProvider(mock_for(config), lambda n, _b: KeyboardInterrupt()
                                                             if n == 5 else None), out_dir=tmp_path / "torn")
        path = tmp_path / "torn" / "transcripts" / "S1_R0_E0" / "0.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write('{"user_id": 99, "sta')
        run_experiment(config, out_dir=tmp_path / "torn", resume=True)
        assert tree(tmp_path / "clean") == tree(tmp_path / "torn")

    def test_cell_failure_is_isolated(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config(provider={"concurrency": 1}))

        def boom(_n, bundle):
            if bundle.provenance.scenario == "S2":
                return RuntimeError("template exploded")
            return None

        result = run_experiment(config, provider=CountingProvider(mock_for(config), boom), out_dir=tmp_path)
        cells = result.manifest["cells"]
        assert cells["S1_R0_E0"]["status"] == "complete"
        assert cells["S2_R0_E0"]["status"] == "failed" and "exploded" in cells["S2_R0_E0"]["error"]
        assert (tmp_path / "metrics" / "S1_R0_E0.csv").exists()
        assert not (tmp_path / "metrics" / "S2_R0_E0.csv").exists()
        assert "missing" in (tmp_path / "report" / "tables.md").read_text()

    def test_failed_completion_is_empty_list(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config(provider={"concurrency": 1}, stats={"repetitions": 1}))
        fail_first = lambda n, _b: ProviderError("server said no", status=503) if n == 1 else None  # noqa: E731
        result = run_experiment(config, provider=CountingProvider(mock_for(config), fail_first), out_dir=tmp_path)
        records = read_transcript(tmp_path / "transcripts" / "S1_R0_E0" / "0.jsonl")
        assert records[0]["status"] == "failed" and records[0]["text"] == ""
        assert "recs" not in records[0] and records[1]["status"] == "ok"
        assert result.manifest["cells"]["S1_R0_E0"]["status"] == "complete"
        assert result.manifest["cells"]["S1_R0_E0"]["counts"]["failed"] == 1
        n_users = len(prepare(config).users)
        assert result.ledger.n_calls == n_users * 2 - 1

    def test_recompute_reproduces_outputs(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config(baselines={"models": ["toppop"]}))
        run_experiment(config, out_dir=tmp_path)
        before = tree(tmp_path)
        for rel in ("metrics/S1_R0_E0.csv", "report/tables.md", "cost.json"):
            (tmp_path / rel).unlink()
        recompute(tmp_path)
        assert tree(tmp_path) == before

    def test_sequential_cells(self, tmp_path):
        config = ExperimentConfig.from_dict(base_config(
            experiment={"kind": "sequential", "icl_demos": [0, 2], "demographics": ["none", "age_group"]}))
        result = run_experiment(config, out_dir=tmp_path)
        assert sorted(result.manifest["cells"]) == ["icl2_frequent_age_group", "icl2_frequent_none",
                                                    "zero_shot_frequent_age_group", "zero_shot_frequent_none"]
        records = read_transcript(tmp_path / "transcripts" / "icl2_frequent_age_group" / "0.jsonl")
        prompts = [r["messages"][-1]["content"] for r in records if r["status"] == "ok"]
        assert prompts and all("is young, and " in p or "is old, and " in p for p in prompts)


class TestLedger:
    def test_seven_scenarios_610_users_call_count(self, tmp_path):
        config = ExperimentConfig.from_dict({
            "dataset": {"synthetic": {"kind": "movielens_like", "n_users": 610, "n_items": 120, "per_user": [12, 20]},
                        "split": [0.8, 0.2]},
            "experiment": {"kind": "topk"},
            "provider": {"kind": "mock", "concurrency": 1},
            "stats": {"B": 10},
        })
        assert len(config.cells()) == 7
        result = run_experiment(config, out_dir=tmp_path)
        assert result.calls_made == 4270 == result.ledger.n_calls

    def test_worked_cost_projection(self):
        ledger = CostLedger(alpha=0.02)
        for _ in range(610 * 7):
            ledger.add(1500)
        assert ledger_summary(ledger)["total_cost"] == pytest.approx(128.10, abs=0.001)

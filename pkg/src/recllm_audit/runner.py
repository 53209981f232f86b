"""End-to-end audit runs driven by a declarative config.

A run walks every experiment cell and repetition, renders one prompt per
admitted user, completes it, and appends one JSON line per user to
``transcripts/<cell>/<rep>.jsonl``. Transcripts are the source of truth:
metrics, baseline rows, cost summary and report tables are all derived from
them by :func:`recompute`, which is also what ``run`` calls last.

Results directory::

    config.json                    normalised config (without the output path)
    manifest.json                  config hash, per-cell status, content addresses
    transcripts/<cell>/<rep>.jsonl
    baselines/<name>.jsonl         per-user baseline lists (+ <name>.json settings)
    metrics/<cell>.csv             one row per metric
    longtail/<cell>.csv, genres/<cell>.csv
    cost.json, cost.csv
    report/tables.md, report/tables.csv, report/tables.json
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import baselines as bl
from . import synthetic
from .dataset import (
    FORMATS,
    chrono_split,
    kcore_filter,
    load_interactions,
    load_user_metadata,
    median_age,
    sample_users,
)
from .errors import (
    CacheMissError,
    ConfigError,
    ProviderError,
    SamplingError,
    TransportError,
)
from .llmclient import CompletionParams, CostLedger, DEFAULT_ALPHA, ledger_summary, make_provider, request_key
from .matcher import DEFAULT_THRESHOLD, PARSE_MODES, MatchIndex, resolve_list
from .metrics import (
    SUPPORT_POLICIES,
    average_rank_at_k,
    count_vector,
    coverage,
    entropy,
    genre_histogram,
    gini,
    hhi,
    hit_indicator_at_k,
    hit_rate_at_k,
    longtail_curve,
    ndcg_at_k,
    recall_at_k,
    temporal_stats,
)
from .profile import DEMOGRAPHICS, STRATEGIES, build_profile, render_demographic, sample_context
from .promptgen import (
    EMPHASES,
    ROLES,
    SCENARIOS,
    SEQUENTIAL_KINDS,
    PromptBundle,
    build_sequential_prompt,
    build_topk_prompt,
)
from .stats import RNG_ALGORITHM, bootstrap_mean_ci, stability_summary

log = logging.getLogger(__name__)

ACCURACY_METRICS = ("ndcg", "recall", "hit_rate", "hit_indicator", "average_rank")
FAIRNESS_METRICS = ("gini", "hhi", "entropy", "coverage", "median_year", "std_year")
MANIFEST_FORMAT = "recllm-audit-results/1"
RETRYABLE = (ProviderError, TransportError, CacheMissError)
BASELINE_NAMES = {"toppop": "TopPop", "itemknn": "ItemKNN", "bpr": "BPR-MF"}


# --------------------------------------------------------------------------
# configuration


def _strict(cls, data, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    return cls(**data)


@dataclass
class SampleSpec:
    n: Optional[int] = None
    policy: str = "moderate_activity"
    seed: int = 0


@dataclass
class DatasetSpec:
    path: Optional[str] = None
    format: str = "movielens_csv"
    items_path: Optional[str] = None
    users_path: Optional[str] = None
    synthetic: Optional[dict] = None
    kcore: int = 1
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    sample: SampleSpec = field(default_factory=SampleSpec)

    def __post_init__(self):
        if isinstance(self.sample, dict) or self.sample is None:
            self.sample = _strict(SampleSpec, self.sample, "dataset.sample")
        self.split = [float(r) for r in self.split]


@dataclass
class ExperimentSpec:
    kind: str = "topk"
    # top-k matrix
    scenarios: list = field(default_factory=lambda: list(SCENARIOS))
    roles: list = field(default_factory=lambda: ["R0"])
    emphases: list = field(default_factory=lambda: ["E0"])
    explicit: bool = False
    context_strategy: str = "frequent"
    # sequential templates
    icl_demos: list = field(default_factory=lambda: [0, 1, 2])
    context_strategies: list = field(default_factory=lambda: ["frequent"])
    demographics: list = field(default_factory=lambda: ["none"])
    n_recent: int = 5
    # shared
    k: Optional[int] = None
    context_size: int = 5
    decay: float = 0.1

    @property
    def list_length(self) -> int:
        if self.k is not None:
            return int(self.k)
        return 10 if self.kind == "topk" else 1


@dataclass
class ProviderSpec:
    kind: str = "mock"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 800
    alpha: float = DEFAULT_ALPHA
    replay_path: Optional[str] = None
    strict: bool = True
    seed: int = 0
    concurrency: int = 4
    max_attempts: int = 5
    backoff: float = 1.0
    timeout: float = 60.0
    base_url: Optional[str] = None


@dataclass
class MatcherSpec:
    mode: str = "rules"
    threshold: float = DEFAULT_THRESHOLD


@dataclass
class StatsSpec:
    B: int = 1000
    seed: int = 0
    repetitions: int = 1


@dataclass
class MetricsSpec:
    support: str = "nonzero_only"


@dataclass
class BaselineSpec:
    models: list = field(default_factory=list)
    exclude_seen: bool = True
    grid_search: bool = False
    itemknn: dict = field(default_factory=lambda: {"k_neighbors": 100, "shrink": 0.0})
    bpr: dict = field(default_factory=dict)


@dataclass
class OutputSpec:
    dir: str = "results"


_SECTIONS = {
    "dataset": DatasetSpec, "experiment": ExperimentSpec, "provider": ProviderSpec,
    "matcher": MatcherSpec, "stats": StatsSpec, "metrics": MetricsSpec,
    "baselines": BaselineSpec, "output": OutputSpec,
}


@dataclass(frozen=True)
class CellSpec:
    cell_id: str
    kind: str
    scenario: Optional[str] = None
    role: str = "R0"
    emphasis: str = "E0"
    explicit: bool = False
    icl_demos: int = 0
    context_strategy: str = "frequent"
    demographic: str = "none"


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    experiment: ExperimentSpec = field(default_factory=ExperimentSpec)
    provider: ProviderSpec = field(default_factory=ProviderSpec)
    matcher: MatcherSpec = field(default_factory=MatcherSpec)
    stats: StatsSpec = field(default_factory=StatsSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    baselines: BaselineSpec = field(default_factory=BaselineSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        try:
            config = cls(**{name: _strict(spec, data.get(name), name) for name, spec in _SECTIONS.items()})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        config.validate()
        return config

    def as_dict(self, include_output: bool = True) -> dict:
        out = asdict(self)
        if not include_output:
            out.pop("output")
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(include_output=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    # ------------------------------------------------------------------
    def cells(self) -> list:
        e = self.experiment
        out = []
        if e.kind == "topk":
            for s, r, m in product(e.scenarios, e.roles, e.emphases):
                out.append(CellSpec(f"{s}_{r}_{m}", "topk", s, r, m, False,
                                    context_strategy=e.context_strategy))
            if e.explicit:
                for r, m in product(e.roles, e.emphases):
                    out.append(CellSpec(f"S3_{r}_{m}_explicit", "topk", "S3", r, m, True,
                                        context_strategy=e.context_strategy))
        else:
            for n, strategy, demo in product(e.icl_demos, e.context_strategies, e.demographics):
                kind = SEQUENTIAL_KINDS[n]
                out.append(CellSpec(f"{kind}_{strategy}_{demo}", kind, icl_demos=n,
                                    context_strategy=strategy, demographic=demo))
        return out

    def validate(self) -> None:
        d, e, p = self.dataset, self.experiment, self.provider
        if (d.path is None) == (d.synthetic is None):
            raise ConfigError("dataset needs exactly one of 'path' or 'synthetic'")
        if d.format not in FORMATS:
            raise ConfigError(f"unknown dataset format {d.format!r}")
        if d.synthetic is not None:
            if not isinstance(d.synthetic, dict) or d.synthetic.get("kind") not in synthetic.GENERATORS:
                raise ConfigError(f"dataset.synthetic.kind must be one of {sorted(synthetic.GENERATORS)}")
        if d.kcore < 1:
            raise ConfigError("dataset.kcore must be >= 1")
        if len(d.split) not in (2, 3) or any(r <= 0 for r in d.split) or abs(sum(d.split) - 1) > 1e-9:
            raise ConfigError("dataset.split must hold 2 or 3 positive ratios summing to 1")
        if d.sample.n is not None and d.sample.n < 1:
            raise ConfigError("dataset.sample.n must be >= 1")
        if d.sample.policy != "moderate_activity":
            raise ConfigError(f"unknown sampling policy {d.sample.policy!r}")
        if e.kind not in ("topk", "sequential"):
            raise ConfigError("experiment.kind must be 'topk' or 'sequential'")
        if e.list_length < 1 or e.context_size < 1 or e.decay < 0 or e.n_recent < 0:
            raise ConfigError("experiment k, context_size, n_recent and decay must be non-negative (k, context_size >= 1)")
        if e.kind == "topk":
            for name, values, allowed in (("scenarios", e.scenarios, SCENARIOS), ("roles", e.roles, ROLES),
                                          ("emphases", e.emphases, EMPHASES)):
                _check_values(name, values, allowed)
            if e.explicit and "S3" not in e.scenarios:
                raise ConfigError("experiment.explicit adds S3 cells, so scenarios must include S3")
            if e.context_strategy not in STRATEGIES:
                raise ConfigError(f"unknown context strategy {e.context_strategy!r}")
        else:
            _check_values("icl_demos", e.icl_demos, tuple(SEQUENTIAL_KINDS))
            _check_values("context_strategies", e.context_strategies, STRATEGIES)
            _check_values("demographics", e.demographics, DEMOGRAPHICS)
            if any(x != "none" for x in e.demographics) and d.users_path is None and d.synthetic is None:
                raise ConfigError("demographic cells need dataset.users_path")
        if p.kind not in ("live", "mock", "replay"):
            raise ConfigError(f"unknown provider kind {p.kind!r}")
        if p.kind == "replay" and not p.replay_path:
            raise ConfigError("replay provider needs provider.replay_path")
        if p.concurrency < 1:
            raise ConfigError("provider.concurrency must be >= 1")
        CompletionParams(p.model, p.temperature, p.max_tokens)
        if p.alpha < 0:
            raise ConfigError("provider.alpha must be >= 0")
        if self.matcher.mode not in PARSE_MODES:
            raise ConfigError(f"unknown matcher mode {self.matcher.mode!r}")
        if not 0 <= self.matcher.threshold <= 1:
            raise ConfigError("matcher.threshold must lie in [0, 1]")
        if self.stats.B < 1 or self.stats.repetitions < 1:
            raise ConfigError("stats.B and stats.repetitions must be >= 1")
        if self.metrics.support not in SUPPORT_POLICIES:
            raise ConfigError(f"unknown metrics.support {self.metrics.support!r}")
        _check_values("baselines.models", self.baselines.models, tuple(BASELINE_NAMES))
        if self.baselines.grid_search and len(d.split) != 3 and self.baselines.models:
            raise ConfigError("baseline grid search needs a validation split (3 split ratios)")
        ids = [c.cell_id for c in self.cells()]
        if not ids:
            raise ConfigError("the experiment matrix is empty")
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate experiment cells")


def _check_values(name, values, allowed):
    bad = [v for v in values if v not in allowed]
    if bad or not isinstance(values, list):
        raise ConfigError(f"{name} must be a list drawn from {list(allowed)}; got {values!r}")


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML (or JSON) config; ``overrides`` maps ``section.key`` to values."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        data.setdefault(section, {})
        if data[section] is None:
            data[section] = {}
        data[section][key] = value
    return ExperimentConfig.from_dict(data)


# --------------------------------------------------------------------------
# data preparation


@dataclass
class Prepared:
    dataset: object
    split: object
    users: list
    train: dict
    truth: dict
    metadata: dict
    median_age: Optional[float]

    @property
    def catalog(self):
        return self.dataset.catalog

    @property
    def domain(self) -> str:
        return self.dataset.domain


def prepare(config: ExperimentConfig) -> Prepared:
    d = config.dataset
    if d.synthetic is not None:
        opts = dict(d.synthetic)
        dataset = synthetic.generate(opts.pop("kind"), **opts)
    else:
        dataset = load_interactions(d.path, d.format, d.items_path)
    if d.kcore > 1:
        dataset = kcore_filter(dataset, d.kcore)
    if d.sample.n is not None:
        dataset = sample_users(dataset, d.sample.n, d.sample.policy, d.sample.seed)
    split = chrono_split(dataset, d.split)
    train = split.train.by_user()
    test = split.test.by_user()
    users = sorted(train)
    truth = {u: [x.item_id for x in test.get(u, [])] for u in users}
    if d.users_path is not None:
        metadata = load_user_metadata(d.users_path)
    elif d.synthetic is not None:
        metadata = synthetic.user_metadata(dataset.user_ids(), seed=int(d.synthetic.get("seed", 0)))
    else:
        metadata = {}
    return Prepared(dataset, split, users, train, truth, metadata, median_age(metadata, users))


def build_bundle(cell: CellSpec, user, prepared: Prepared, config: ExperimentConfig) -> PromptBundle:
    e = config.experiment
    history = prepared.train[user]
    if cell.kind == "topk":
        context = sample_context(history, cell.context_strategy, e.context_size, e.decay, user_id=user)
        return build_topk_prompt(context, prepared.catalog, cell.scenario, cell.role, cell.emphasis,
                                 cell.explicit, e.list_length)
    context, examples = build_profile(history, cell.context_strategy, e.context_size, e.n_recent,
                                      cell.icl_demos, e.decay)
    meta = dict(prepared.metadata.get(user, {}))
    if prepared.median_age is not None:
        meta.setdefault("median_age", prepared.median_age)
    clause = render_demographic(cell.demographic, meta)
    return build_sequential_prompt(context, examples, clause, prepared.catalog, prepared.domain,
                                   e.list_length)


# --------------------------------------------------------------------------
# files and content addresses


def git_blob_sha1(data: bytes) -> str:
    """Content address in git's blob format, so ``git hash-object`` agrees."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_address(path) -> str:
    return git_blob_sha1(Path(path).read_bytes())


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


def read_transcript(path) -> list:
    """Records of a transcript file; a torn final line is ignored."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.endswith("\n"):
                break
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                break
    return records


def _valid_prefix(path: Path, users: list) -> list:
    """Keep the records that line up with the sorted user order; truncate the rest."""
    records = read_transcript(path)
    keep = []
    for rec, user in zip(records, users):
        if rec.get("user_id") != user or "status" not in rec:
            break
        keep.append(rec)
    if path.exists():
        write_text(path, "".join(_json_line(r) for r in keep))
    return keep


class Manifest:
    def __init__(self, path: Path, config_hash: str):
        self.path = path
        self.data = {"format": MANIFEST_FORMAT, "config_hash": config_hash, "rng": RNG_ALGORITHM,
                     "cells": {}, "baselines": {}, "outputs": {}}

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        m = cls(path, "")
        m.data = json.loads(path.read_text(encoding="utf-8"))
        return m

    @property
    def cells(self) -> dict:
        return self.data["cells"]

    def save(self) -> None:
        write_text(self.path, _dump_json(self.data))


# --------------------------------------------------------------------------
# running


@dataclass
class RunResult:
    out_dir: Path
    manifest: dict
    calls_made: int
    ledger: CostLedger


def _make_provider(config: ExperimentConfig, prepared: Prepared):
    p = config.provider
    live = {}
    if p.kind == "live":
        live = {"max_attempts": p.max_attempts, "backoff": p.backoff, "timeout": p.timeout,
                "max_concurrency": p.concurrency}
        if p.base_url:
            live["base_url"] = p.base_url
    return make_provider(p.kind, prepared.catalog, p.replay_path, p.strict, p.seed,
                         config.experiment.list_length, prepared.domain, **live)


def _serve_user(cell, user, rep, prepared, config, provider, params):
    """Prompt, complete and (for llm-assisted parsing) pre-parse one user."""
    try:
        bundle = build_bundle(cell, user, prepared, config)
    except SamplingError as exc:
        return {"user_id": user, "cell": cell.cell_id, "rep": rep, "status": "skipped", "error": str(exc)}
    messages = bundle.messages()
    rec = {
        "user_id": user, "cell": cell.cell_id, "rep": rep,
        "messages": messages,
        "key_hash": request_key(params.model, messages, params.as_dict(), rep),
        "model": params.model, "params": params.as_dict(),
    }
    try:
        resp = provider.complete(bundle, params, rep)
    except RETRYABLE as exc:
        rec.update(status="failed", error=f"{type(exc).__name__}: {exc}", text="",
                   prompt_tokens=0, completion_tokens=0, latency=0.0, provider_tag=getattr(provider, "tag", None))
        return rec
    rec.update(status="ok", text=resp.text, prompt_tokens=resp.prompt_tokens,
               completion_tokens=resp.completion_tokens, latency=resp.latency,
               provider_tag=resp.provider_tag, tokens_approximate=resp.tokens_approximate)
    if config.matcher.mode == "llm_assisted":
        from .matcher import PARSING_SYSTEM_PROMPT

        parse_bundle = PromptBundle(PARSING_SYSTEM_PROMPT[prepared.domain], resp.text, bundle.provenance)
        try:
            parsed = provider.complete(parse_bundle, params, rep)
            rec["parse_reply"] = parsed.text
            rec["parse_tokens"] = parsed.total_tokens
        except RETRYABLE as exc:
            rec["parse_reply"] = None
            rec["parse_error"] = f"{type(exc).__name__}: {exc}"
    return rec


def _resolve(rec: dict, prepared: Prepared, config: ExperimentConfig, index: MatchIndex):
    if rec.get("status") != "ok":
        return []
    llm = None
    if config.matcher.mode == "llm_assisted":
        reply = rec.get("parse_reply")
        if reply is None:
            return []
        llm = lambda _messages: reply  # noqa: E731
    result = resolve_list(rec["text"], prepared.catalog, prepared.domain, config.matcher.mode,
                          config.matcher.threshold, rec["user_id"], index=index, llm=llm)
    return list(result.item_ids)


def _run_cell(cell, rep, path: Path, prepared, config, provider, params, index, resume) -> int:
    users = prepared.users
    done = _valid_prefix(path, users) if resume else []
    if not resume and path.exists():
        path.unlink()
    todo = users[len(done):]
    path.parent.mkdir(parents=True, exist_ok=True)
    calls = 0
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        def work(user):
            return _serve_user(cell, user, rep, prepared, config, provider, params)

        if config.provider.concurrency > 1 and len(todo) > 1:
            pool = ThreadPoolExecutor(max_workers=config.provider.concurrency)
            results = pool.map(work, todo)
        else:
            pool, results = None, map(work, todo)
        try:
            for rec in results:
                if rec["status"] == "ok":
                    rec["recs"] = _resolve(rec, prepared, config, index)
                if rec["status"] != "skipped":
                    calls += 1
                fh.write(_json_line(rec))
                fh.flush()
        finally:
            if pool is not None:
                pool.shutdown(wait=True, cancel_futures=True)
    return calls


def run_experiment(config: ExperimentConfig, provider=None, out_dir=None, resume: bool = False) -> RunResult:
    """Execute every cell x repetition, then derive all metrics and tables.

    ``provider`` overrides the one described by ``config.provider`` (tests use
    this to inject counting or failing fakes). Completed cells are skipped
    when ``resume`` is set and their transcripts still hash to the manifest.
    """
    config.validate()
    out = Path(out_dir or config.output.dir)
    manifest_path = out / "manifest.json"
    chash = config.config_hash()
    if manifest_path.exists():
        if not resume:
            raise ConfigError(f"{out} already holds results; pass resume=True (--resume) or pick another directory")
        manifest = Manifest.load(manifest_path)
        if manifest.data.get("config_hash") != chash:
            raise ConfigError("config differs from the one recorded in the results directory; refusing to resume")
    else:
        manifest = Manifest(manifest_path, chash)

    prepared = prepare(config)
    cells = config.cells()
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "config.json", _dump_json(config.as_dict(include_output=False)))
    for cell in cells:
        manifest.cells.setdefault(cell.cell_id, {"status": "pending", "error": None, "transcripts": {}})
    manifest.save()

    provider = provider or _make_provider(config, prepared)
    p = config.provider
    params = CompletionParams(p.model, p.temperature, p.max_tokens)
    index = MatchIndex(prepared.catalog, prepared.domain)
    calls = 0
    for cell in cells:
        entry = manifest.cells[cell.cell_id]
        if resume and entry["status"] == "complete" and _addresses_hold(out, entry):
            continue
        entry.update(status="running", error=None)
        manifest.save()
        try:
            for rep in range(config.stats.repetitions):
                rel = f"transcripts/{cell.cell_id}/{rep}.jsonl"
                calls += _run_cell(cell, rep, out / rel, prepared, config, provider, params, index, resume)
                entry["transcripts"][str(rep)] = {"path": rel, "address": file_address(out / rel)}
        except Exception as exc:  # isolate the failure to this cell
            log.warning("cell %s failed: %s", cell.cell_id, exc)
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        else:
            entry["status"] = "complete"
        manifest.save()

    if config.baselines.models:
        _run_baselines(config, prepared, out, manifest, resume)
        manifest.save()

    recompute(out, config, prepared)
    manifest = Manifest.load(manifest_path)
    return RunResult(out, manifest.data, calls, ledger_from_transcripts(out, manifest.data, config.provider.alpha))


def _addresses_hold(out: Path, entry: dict) -> bool:
    for ref in entry.get("transcripts", {}).values():
        path = out / ref["path"]
        if not path.exists() or file_address(path) != ref["address"]:
            return False
    return bool(entry.get("transcripts"))


# --------------------------------------------------------------------------
# baselines


def _run_baselines(config: ExperimentConfig, prepared: Prepared, out: Path, manifest: Manifest, resume: bool):
    spec = config.baselines
    k = config.experiment.list_length
    matrix = bl.InteractionMatrix(prepared.split.train, item_ids=prepared.catalog.sorted_ids(),
                                  user_ids=prepared.users)
    val_truth = {}
    if prepared.split.validation is not None:
        for u, xs in prepared.split.validation.by_user().items():
            val_truth[u] = [x.item_id for x in xs]
    for key in spec.models:
        name = BASELINE_NAMES[key]
        rel = f"baselines/{key}.jsonl"
        recorded = manifest.data["baselines"].get(key)
        if resume and recorded and (out / rel).exists() and file_address(out / rel) == recorded["address"]:
            continue
        settings = {"model": name, "k": k, "exclude_seen": spec.exclude_seen}
        if key == "toppop":
            recs = bl.top_pop(matrix, k, spec.exclude_seen, prepared.users)
        elif key == "itemknn":
            params = dict(spec.itemknn)
            if spec.grid_search:
                params, score, results = bl.grid_search("itemknn", matrix, val_truth, k=10)
                settings["grid"] = [{"params": p_, "val_ndcg@10": s} for p_, s in results]
            model = bl.item_knn_fit(matrix, **params)
            recs = bl.recommend_all("itemknn", model, prepared.users, k)
            settings["params"] = params
        else:
            fixed = dict(spec.bpr)
            params = fixed
            if spec.grid_search:
                best, score, results = bl.grid_search("bpr", matrix, val_truth, k=10, **fixed)
                params = {**fixed, **best}
                settings["grid"] = [{"params": p_, "val_ndcg@10": s} for p_, s in results]
            model = bl.bpr_fit(matrix, **params)
            recs = bl.recommend_all("bpr", model, prepared.users, k)
            settings["params"] = asdict(model.hyperparams)
        lines = "".join(_json_line({"user_id": u, "recs": recs[u], "status": "ok"}) for u in prepared.users)
        write_text(out / rel, lines)
        write_text(out / f"baselines/{key}.json", _dump_json(settings))
        manifest.data["baselines"][key] = {"name": name, "path": rel, "address": file_address(out / rel)}


# --------------------------------------------------------------------------
# metrics from transcripts


def user_metrics(recs, truth, k: int) -> Optional[dict]:
    """Per-user accuracy values, or ``None`` when the user has no ground truth."""
    if not truth:
        return None
    return {
        "ndcg": ndcg_at_k(recs, truth, k),
        "recall": recall_at_k(recs, truth, k),
        "hit_rate": hit_rate_at_k(recs, truth, k),
        "hit_indicator": hit_indicator_at_k(recs, truth, k),
        "average_rank": average_rank_at_k(recs, truth, k),
    }


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def fairness_values(all_recs: list, catalog, support: str) -> dict:
    lists = [r for r in all_recs if r]
    out = dict.fromkeys(FAIRNESS_METRICS)
    if not lists:
        out["coverage"] = 0.0
        return out
    counts = count_vector(lists, catalog, support)
    out.update(gini=gini(counts), hhi=hhi(counts), entropy=entropy(counts), coverage=coverage(lists, catalog))
    ts = temporal_stats(lists, catalog)
    out.update(median_year=ts.median_year, std_year=ts.std_year)
    return out


@dataclass
class CellMetrics:
    cell_id: str
    rows: list          # dicts with the METRIC_COLUMNS keys
    pooled_recs: list   # every list across reps, for long-tail / genre tables
    n_users: int
    n_excluded: int
    n_failed: int
    n_skipped: int


METRIC_COLUMNS = ("metric", "avg", "bootstrap_mean", "ci_low", "ci_high", "run_mean", "run_std",
                  "run_range", "per_run", "n_users", "B", "seed", "rng")


def aggregate(cell_id: str, runs: list, truth: dict, catalog, k: int, B: int, seed: int,
              support: str) -> CellMetrics:
    """Reduce per-rep ``{user: recs}`` maps to one metric row per metric.

    The per-user value is the mean across repetitions; ``avg`` and the
    bootstrap are taken over users (sorted), ``per_run`` holds each
    repetition's user-mean and the stability columns summarise it.
    Fairness metrics pool every list within a repetition.
    """
    users = sorted({u for run in runs for u in run})
    admitted = [u for u in users if truth.get(u)]
    per_rep = [{u: user_metrics(run.get(u, []), truth[u], k) for u in admitted if u in run} for run in runs]
    rows = []
    for m in ACCURACY_METRICS:
        per_user = {}
        for u in admitted:
            per_user[u] = _mean(rep[u][m] for rep in per_rep if u in rep)
        values = [per_user[u] for u in admitted if per_user[u] is not None]
        per_run = [_mean(rep[u][m] for u in admitted if u in rep) for rep in per_rep]
        rows.append(_row(m, values, per_run, B, seed))
    for m in FAIRNESS_METRICS:
        per_run = [fairness_values([run[u] for u in sorted(run)], catalog, support)[m] for run in runs]
        defined = [v for v in per_run if v is not None]
        row = _row(m, [], per_run, B, seed)
        row["avg"] = _mean(defined)
        rows.append(row)
    pooled = [run[u] for run in runs for u in sorted(run)]
    return CellMetrics(cell_id, rows, pooled, len(admitted), len(users) - len(admitted), 0, 0)


def _row(metric, values, per_run, B, seed) -> dict:
    row = dict.fromkeys(METRIC_COLUMNS)
    row.update(metric=metric, per_run=per_run, n_users=len(values))
    if values:
        row["avg"] = float(np.mean(values))
        bs = bootstrap_mean_ci(values, B=B, seed=seed)
        row.update(bootstrap_mean=bs.mean_of_means, ci_low=bs.ci_low, ci_high=bs.ci_high, B=bs.B,
                   seed=bs.seed, rng=bs.rng)
    defined = [v for v in per_run if v is not None]
    if defined:
        row["run_mean"] = float(np.mean(defined))
    if len(defined) >= 2 and len(defined) == len(per_run):
        st = stability_summary(defined)
        row.update(run_mean=st.mean, run_std=st.std, run_range=st.range)
    return row


def metrics_csv(cm: CellMetrics) -> str:
    rows = []
    for r in cm.rows:
        rows.append([
            r["metric"], _num(r["avg"]), _num(r["bootstrap_mean"]), _num(r["ci_low"]), _num(r["ci_high"]),
            _num(r["run_mean"]), _num(r["run_std"]), _num(r["run_range"]),
            ";".join("" if v is None else repr(float(v)) for v in r["per_run"]),
            r["n_users"], "" if r["B"] is None else r["B"], "" if r["seed"] is None else r["seed"],
            r["rng"] or "",
        ])
    return _csv_text(METRIC_COLUMNS, rows)


def read_metrics_csv(path) -> dict:
    """``{metric: row}`` with numeric fields parsed back (blank -> ``None``)."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for key, value in row.items():
                if key in ("metric", "rng"):
                    parsed[key] = value or None
                elif key == "per_run":
                    parsed[key] = [float(v) if v else None for v in value.split(";")] if value else []
                elif value == "":
                    parsed[key] = None
                elif key in ("n_users", "B", "seed"):
                    parsed[key] = int(value)
                else:
                    parsed[key] = float(value)
            out[parsed["metric"]] = parsed
    return out


def ledger_from_transcripts(out: Path, manifest: dict, alpha: float) -> CostLedger:
    """Rebuild the cost ledger from successful transcript records."""
    ledger = CostLedger(alpha)
    for cell_id in sorted(manifest["cells"]):
        refs = manifest["cells"][cell_id].get("transcripts", {})
        for rep in sorted(refs, key=int):
            for rec in read_transcript(out / refs[rep]["path"]):
                if rec.get("status") == "ok":
                    ledger.add(int(rec["prompt_tokens"]) + int(rec["completion_tokens"]),
                               float(rec["latency"]), user_id=rec["user_id"], cell=cell_id)
    return ledger


def recompute(out_dir, config: Optional[ExperimentConfig] = None, prepared: Optional[Prepared] = None) -> dict:
    """Rebuild metrics, cost summary and report tables from transcripts alone."""
    from .report import render_report

    out = Path(out_dir)
    if config is None:
        config = ExperimentConfig.from_dict(json.loads((out / "config.json").read_text(encoding="utf-8")))
    prepared = prepared or prepare(config)
    manifest = Manifest.load(out / "manifest.json")
    index = MatchIndex(prepared.catalog, prepared.domain)
    k = config.experiment.list_length
    st, support = config.stats, config.metrics.support
    outputs = {}

    def emit(rel: str, text: str):
        write_text(out / rel, text)
        outputs[rel] = git_blob_sha1(text.encode("utf-8"))

    def derived_tables(cell_id, cm: CellMetrics):
        emit(f"metrics/{cell_id}.csv", metrics_csv(cm))
        lists = [r for r in cm.pooled_recs if r]
        curve = longtail_curve(count_vector(lists)) if lists else []
        emit(f"longtail/{cell_id}.csv", _csv_text(("rank", "count"), curve))
        emit(f"genres/{cell_id}.csv", _csv_text(("genre", "count"), genre_histogram(lists, prepared.catalog)))

    for cell_id in [c.cell_id for c in config.cells()]:
        entry = manifest.cells.get(cell_id)
        if not entry or entry["status"] != "complete":
            continue
        runs, failed, skipped = [], 0, 0
        for rep in sorted(entry["transcripts"], key=int):
            run = {}
            for rec in read_transcript(out / entry["transcripts"][rep]["path"]):
                if rec["status"] == "skipped":
                    skipped += 1
                    continue
                failed += rec["status"] == "failed"
                run[rec["user_id"]] = _resolve(rec, prepared, config, index)
            runs.append(run)
        cm = aggregate(cell_id, runs, prepared.truth, prepared.catalog, k, st.B, st.seed, support)
        cm.n_failed, cm.n_skipped = failed, skipped
        derived_tables(cell_id, cm)
        entry["counts"] = {"users": cm.n_users, "excluded": cm.n_excluded, "failed": failed, "skipped": skipped}

    for key, ref in sorted(manifest.data.get("baselines", {}).items()):
        run = {rec["user_id"]: rec["recs"] for rec in read_transcript(out / ref["path"])}
        cm = aggregate(f"baseline_{key}", [run], prepared.truth, prepared.catalog, k, st.B, st.seed, support)
        derived_tables(f"baseline_{key}", cm)

    ledger = ledger_from_transcripts(out, manifest.data, config.provider.alpha)
    summary = ledger_summary(ledger)
    emit("cost.json", _dump_json(summary))
    by_cell = {}
    for r in ledger.records:
        calls, tokens, cost = by_cell.get(r.cell, (0, 0, 0.0))
        by_cell[r.cell] = (calls + 1, tokens + r.prompt_tokens + r.completion_tokens, cost + r.cost)
    cost_rows = [(c, n, t, repr(cost)) for c, (n, t, cost) in sorted(by_cell.items())]
    emit("cost.csv", _csv_text(("cell", "calls", "tokens", "cost"), cost_rows))

    manifest.data["outputs"] = outputs
    manifest.save()
    for rel, text in render_report(out).items():
        outputs[rel] = git_blob_sha1(text.encode("utf-8"))
    manifest.save()
    return manifest.data

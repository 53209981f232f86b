"""Offline-reproducible auditing of LLM-based recommenders.

The package renders prompts for a scenario/role/emphasis matrix and for
sequential in-context templates, sends them to a live, mock or replayed
chat-completion provider, resolves the free-text answers to catalog items,
and scores the lists for accuracy, provider fairness and temporal spread
next to classical collaborative-filtering baselines.
"""

from .dataset import Catalog, Dataset, Interaction, Item, chrono_split, dataset_stats, load_interactions
from .errors import AuditError, CacheMissError, ConfigError, ParseError, ProviderError, SamplingError
from .llmclient import CompletionParams, CostLedger, MockProvider, ReplayProvider, estimate_cost
from .matcher import find_closest_match, parse_recommendations, resolve_list, similarity_ratio
from .metrics import coverage, entropy, gini, hhi, ndcg_at_k, recall_at_k
from .promptgen import build_sequential_prompt, build_topk_prompt
from .runner import ExperimentConfig, load_config, recompute, run_experiment
from .stats import bootstrap_mean_ci, stability_summary

__version__ = "0.1.0"

__all__ = [
    "AuditError", "CacheMissError", "Catalog", "CompletionParams", "ConfigError", "CostLedger", "Dataset",
    "ExperimentConfig", "Interaction", "Item", "MockProvider", "ParseError", "ProviderError",
    "ReplayProvider", "SamplingError", "bootstrap_mean_ci", "build_sequential_prompt", "build_topk_prompt",
    "chrono_split", "coverage", "dataset_stats", "entropy", "estimate_cost", "find_closest_match", "gini",
    "hhi", "load_config", "load_interactions", "ndcg_at_k", "parse_recommendations", "recall_at_k",
    "recompute", "resolve_list", "run_experiment", "similarity_ratio", "stability_summary",
]

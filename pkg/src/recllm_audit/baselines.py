"""Classical collaborative-filtering baselines on binarised train data:
TopPop, item-based kNN with shrunk cosine similarity, and BPR matrix
factorisation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, TrainingError
from .metrics import EmptyGroundTruth, ndcg_at_k

ITEMKNN_GRID = {"k_neighbors": [10, 50, 100, 200, 250, 300, 400], "shrink": [0.0, 0.1, 0.5, 1, 2]}
BPR_GRID = {"dim": [32, 64, 128], "learning_rate": [1e-4, 5e-4, 1e-3, 5e-3]}
NOT_IMPLEMENTED = ("MultiVAE", "NGCF", "LightGCN")


class InteractionMatrix:
    """Binary user x item incidence built from a train split.

    Any rating or play counts as a positive. ``item_ids`` defaults to the
    items present in ``train``; pass the catalog ids to rank the full catalog.
    """

    def __init__(self, train, item_ids=None, user_ids=None):
        self.user_ids = list(user_ids) if user_ids is not None else train.user_ids()
        self.item_ids = sorted(item_ids) if item_ids is not None else train.item_ids()
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.item_index = {it: j for j, it in enumerate(self.item_ids)}
        pairs = {(self.user_index[x.user_id], self.item_index[x.item_id])
                 for x in train.interactions
                 if x.user_id in self.user_index and x.item_id in self.item_index}
        rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
        cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
        self.matrix = sp.csr_matrix(
            (np.ones(len(pairs)), (rows, cols)), shape=(len(self.user_ids), len(self.item_ids))
        )
        self.matrix.sort_indices()

    @property
    def shape(self):
        return self.matrix.shape

    def seen(self, user_index: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[user_index]:m.indptr[user_index + 1]]


def _rank(scores: np.ndarray, k: int, exclude: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices of the top-``k`` scores, ties by ascending index."""
    scores = np.asarray(scores, dtype=float).copy()
    allowed = np.ones(scores.size, dtype=bool)
    if exclude is not None and len(exclude):
        allowed[exclude] = False
    candidates = np.flatnonzero(allowed)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]]


# --------------------------------------------------------------------------
# TopPop


def popularity(train: InteractionMatrix) -> np.ndarray:
    return np.asarray(train.matrix.sum(axis=0)).ravel()


def top_pop(train: InteractionMatrix, k: int, exclude_seen: bool = True, users=None) -> dict:
    """Global popularity ranking, per user minus their train items."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    pop = popularity(train)
    users = train.user_ids if users is None else users
    out = {}
    for u in users:
        ui = train.user_index.get(u)
        seen = train.seen(ui) if (exclude_seen and ui is not None) else None
        out[u] = [train.item_ids[j] for j in _rank(pop, k, seen)]
    return out


# --------------------------------------------------------------------------
# ItemKNN


@dataclass
class ItemKNNModel:
    train: InteractionMatrix
    similarity: sp.csr_matrix  # row i holds the kept neighbours j of item i
    k_neighbors: int
    shrink: float
    fallbacks: list = field(default_factory=list)

    def scores(self, user_index: int) -> np.ndarray:
        seen = self.train.seen(user_index)
        return np.asarray(self.similarity[:, seen].sum(axis=1)).ravel()


def cosine_similarity(matrix: sp.csr_matrix, shrink: float = 0.0) -> sp.csr_matrix:
    """``<c_i, c_j> / (|c_i| |c_j| + shrink)`` over item columns, zero diagonal."""
    cols = matrix.tocsc().astype(float)
    dots = (cols.T @ cols).tocsr()
    norms = np.sqrt(np.asarray(cols.multiply(cols).sum(axis=0)).ravel())
    dots = dots.tocoo()
    denom = norms[dots.row] * norms[dots.col] + shrink
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(denom > 0, dots.data / denom, 0.0)
    keep = dots.row != dots.col
    return sp.csr_matrix((vals[keep], (dots.row[keep], dots.col[keep])), shape=dots.shape)


def _prune_rows(sim: sp.csr_matrix, k: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i in range(sim.shape[0]):
        start, end = sim.indptr[i], sim.indptr[i + 1]
        idx, data = sim.indices[start:end], sim.data[start:end]
        if idx.size > k:
            order = np.lexsort((idx, -data))[:k]
            idx, data = idx[order], data[order]
        rows.extend([i] * idx.size)
        cols.extend(idx.tolist())
        vals.extend(data.tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=sim.shape)


def item_knn_fit(train: InteractionMatrix, k_neighbors: int = 100, shrink: float = 0.0) -> ItemKNNModel:
    if k_neighbors < 1:
        raise ConfigError("k_neighbors must be >= 1")
    if shrink < 0:
        raise ConfigError("shrink must be >= 0")
    sim = _prune_rows(cosine_similarity(train.matrix, shrink), k_neighbors)
    return ItemKNNModel(train, sim, k_neighbors, shrink)


def item_knn_recommend(model: ItemKNNModel, user, k: int) -> list:
    """Top-``k`` unseen items by summed neighbour similarity.

    Users without train history get the TopPop list and are noted in
    ``model.fallbacks``.
    """
    train = model.train
    ui = train.user_index.get(user)
    if ui is None or train.seen(ui).size == 0:
        model.fallbacks.append(user)
        exclude = None if ui is None else train.seen(ui)
        return [train.item_ids[j] for j in _rank(popularity(train), k, exclude)]
    return [train.item_ids[j] for j in _rank(model.scores(ui), k, train.seen(ui))]


# --------------------------------------------------------------------------
# BPR-MF


@dataclass
class BprHyperparams:
    dim: int = 64
    learning_rate: float = 1e-3
    epochs: int = 200
    regularization: float = 1e-4
    batch_size: int = 256
    optimizer: str = "adam"
    init_std: float = 0.1
    seed: int = 0


@dataclass
class BprModel:
    train: InteractionMatrix
    user_factors: np.ndarray
    item_factors: np.ndarray
    hyperparams: BprHyperparams
    losses: list = field(default_factory=list)

    def scores(self, user_index: int) -> np.ndarray:
        return self.item_factors @ self.user_factors[user_index]


class _Adam:
    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.lr, self.b1, self.b2, self.eps, self.t = lr, beta1, beta2, eps, 0

    def step(self, params, grads):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _sample_negatives(rng, train: InteractionMatrix, users: np.ndarray) -> np.ndarray:
    n_items = train.shape[1]
    neg = rng.integers(0, n_items, size=users.size)
    m = train.matrix
    for _ in range(100):
        bad = np.asarray(m[users, neg]).ravel() > 0
        if not bad.any():
            break
        neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    return neg


def bpr_fit(train: InteractionMatrix, hyperparams: Optional[BprHyperparams] = None, **overrides) -> BprModel:
    """Fit BPR-MF by mini-batch stochastic gradient steps on sampled triples.

    Each epoch draws one ``(u, i+, i-)`` triple per train interaction, with
    ``i-`` uniform over items ``u`` has not seen, and ascends
    ``ln sigmoid(x_ui+ - x_ui-) - reg * (|p_u|^2 + |q_i+|^2 + |q_i-|^2)``.
    ``optimizer`` is ``"adam"`` (default) or plain ``"sgd"``.
    """
    hp = hyperparams or BprHyperparams()
    if overrides:
        hp = BprHyperparams(**{**asdict(hp), **overrides})
    if hp.dim < 1:
        raise ConfigError("dim must be >= 1")
    if hp.epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if hp.optimizer not in ("adam", "sgd"):
        raise ConfigError(f"unknown optimizer {hp.optimizer!r}")
    rng = np.random.Generator(np.random.PCG64(hp.seed))
    n_users, n_items = train.shape
    P = rng.normal(0.0, hp.init_std, size=(n_users, hp.dim))
    Q = rng.normal(0.0, hp.init_std, size=(n_items, hp.dim))
    model = BprModel(train, P, Q, hp)
    coo = train.matrix.tocoo()
    pos_users, pos_items = coo.row.astype(np.int64), coo.col.astype(np.int64)
    if pos_users.size == 0:
        return model
    full = n_items
    adam = _Adam([P.shape, Q.shape], hp.learning_rate) if hp.optimizer == "adam" else None

    for epoch in range(hp.epochs):
        order = rng.permutation(pos_users.size)
        epoch_loss = 0.0
        for start in range(0, order.size, hp.batch_size):
            b = order[start:start + hp.batch_size]
            u, i = pos_users[b], pos_items[b]
            if np.all(train.matrix.getnnz(axis=1)[u] >= full):
                continue
            j = _sample_negatives(rng, train, u)
            pu, qi, qj = P[u], Q[i], Q[j]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked per epoch
                diff = np.einsum("bd,bd->b", pu, qi - qj)
                sig_neg = 1.0 / (1.0 + np.exp(diff))  # sigmoid(-diff) = d(-ln sigmoid(diff))/d(-diff)
                epoch_loss += float(np.sum(np.logaddexp(0.0, -diff)))
            g = sig_neg[:, None]
            gP = np.zeros_like(P)
            gQ = np.zeros_like(Q)
            np.add.at(gP, u, -g * (qi - qj) + 2 * hp.regularization * pu)
            np.add.at(gQ, i, -g * pu + 2 * hp.regularization * qi)
            np.add.at(gQ, j, g * pu + 2 * hp.regularization * qj)
            with np.errstate(over="ignore", invalid="ignore"):
                if adam is not None:
                    adam.step([P, Q], [gP, gQ])
                else:
                    P -= hp.learning_rate * gP
                    Q -= hp.learning_rate * gQ
        if not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise TrainingError(f"BPR diverged at epoch {epoch + 1}")
        model.losses.append(epoch_loss / pos_users.size)
    return model


def bpr_recommend(model: BprModel, user, k: int) -> list:
    train = model.train
    ui = train.user_index.get(user)
    if ui is None:
        return [train.item_ids[j] for j in _rank(popularity(train), k)]
    return [train.item_ids[j] for j in _rank(model.scores(ui), k, train.seen(ui))]


def auc(score_fn, train: InteractionMatrix, heldout: dict) -> float:
    """Mean per-user AUC of held-out positives against items never interacted with.

    ``heldout`` maps user id -> held-out item ids; ``score_fn(user_index)``
    returns a score per item.
    """
    per_user = []
    for user, items in heldout.items():
        ui = train.user_index.get(user)
        if ui is None:
            continue
        pos = np.array([train.item_index[i] for i in items if i in train.item_index])
        if pos.size == 0:
            continue
        excluded = np.zeros(train.shape[1], dtype=bool)
        excluded[train.seen(ui)] = True
        excluded[pos] = True
        neg = np.flatnonzero(~excluded)
        if neg.size == 0:
            continue
        s = score_fn(ui)
        sp_, sn = s[pos][:, None], s[neg][None, :]
        per_user.append(float(np.mean((sp_ > sn) + 0.5 * (sp_ == sn))))
    return float(np.mean(per_user)) if per_user else float("nan")


# --------------------------------------------------------------------------
# model selection and persistence


def recommend_all(kind: str, model, users, k: int) -> dict:
    if kind == "itemknn":
        return {u: item_knn_recommend(model, u, k) for u in users}
    if kind == "bpr":
        return {u: bpr_recommend(model, u, k) for u in users}
    raise ConfigError(f"unknown baseline {kind!r}")


def validation_ndcg(recs: dict, truth: dict, k: int = 10) -> float:
    vals = []
    for u, items in truth.items():
        try:
            vals.append(ndcg_at_k(recs.get(u, []), items, k))
        except EmptyGroundTruth:
            continue
    return float(np.mean(vals)) if vals else 0.0


def grid_search(kind: str, train: InteractionMatrix, validation_truth: dict, grid: Optional[dict] = None,
                k: int = 10, **fixed):
    """Exhaustive grid search scored by validation NDCG@k.

    Returns ``(best_params, best_score, all_results)``.
    """
    if grid is None:
        grid = ITEMKNN_GRID if kind == "itemknn" else BPR_GRID
    keys = sorted(grid)
    results = []
    best = (None, -1.0, None)
    users = sorted(validation_truth)
    for values in product(*(grid[key] for key in keys)):
        params = dict(zip(keys, values))
        if kind == "itemknn":
            model = item_knn_fit(train, **params)
        elif kind == "bpr":
            model = bpr_fit(train, **{**fixed, **params})
        else:
            raise ConfigError(f"unknown baseline {kind!r}")
        score = validation_ndcg(recommend_all(kind, model, users, k), validation_truth, k)
        results.append((params, score))
        if score > best[1]:
            best = (params, score, model)
    return best[0], best[1], results


def save_bpr(model: BprModel, directory) -> Path:
    """Write ``user_factors.csv``, ``item_factors.csv`` and a ``model.json`` header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "user_factors.csv", model.user_factors, delimiter=",", fmt="%.17g")
    np.savetxt(directory / "item_factors.csv", model.item_factors, delimiter=",", fmt="%.17g")
    header = {
        "format": "bpr-mf/1",
        "hyperparams": asdict(model.hyperparams),
        "user_ids": model.train.user_ids,
        "item_ids": model.train.item_ids,
        "shape": {"users": model.user_factors.shape[0], "items": model.item_factors.shape[0],
                  "dim": model.user_factors.shape[1]},
        "files": {"user_factors": "user_factors.csv", "item_factors": "item_factors.csv"},
    }
    (directory / "model.json").write_text(json.dumps(header, indent=2, default=str), encoding="utf-8")
    return directory


def load_bpr_factors(directory):
    """Read a checkpoint back as ``(header, user_factors, item_factors)``."""
    directory = Path(directory)
    header = json.loads((directory / "model.json").read_text(encoding="utf-8"))
    dim = header["shape"]["dim"]
    P = np.loadtxt(directory / "user_factors.csv", delimiter=",", ndmin=2).reshape(-1, dim)
    Q = np.loadtxt(directory / "item_factors.csv", delimiter=",", ndmin=2).reshape(-1, dim)
    return header, P, Q

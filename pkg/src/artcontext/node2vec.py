"""Node context embeddings from second-order biased random walks.

Walks are generated per start node with derived seeds so the output is
reproducible and independent of scheduling.  The skip-gram trainer applies
one positive and ``negatives_per_positive`` negative sigmoid updates per
(center, context) pair, with negatives drawn from the unigram distribution
raised to 3/4 and a linear learning-rate decay over the update schedule.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import binio
from .autodiff import derive_seed
from .errors import DimensionMismatchError
from .kgraph import KnowledgeGraph


@dataclass
class WalkConfig:
    return_param: float = 1.0
    inout_param: float = 1.0
    walk_length: int = 80
    walks_per_node: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.return_param <= 0 or self.inout_param <= 0:
            raise ValueError("p and q must be positive")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")


@dataclass
class SkipGramConfig:
    dim: int = 128
    window: int = 10
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives_per_positive < 0:
            raise ValueError("negatives_per_positive must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EmbeddingTable:
    """Fixed-dimension vectors keyed by node key (``family/key``) or painting id."""

    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __getitem__(self, key: str) -> np.ndarray:
        return self.vectors[key]

    def matrix_for(self, keys: Sequence[str]) -> np.ndarray:
        missing = [k for k in keys if k not in self.vectors]
        if missing:
            raise KeyError(f"keys missing from embedding table: {missing[:5]}")
        return np.stack([self.vectors[k] for k in keys]).astype(np.float64)

    def save(self, path: str) -> None:
        items = sorted(self.vectors.items())
        binio.write_vector_table(path, binio.EMBEDDING_MAGIC, items, self.dim)

    @classmethod
    def load(cls, path: str) -> "EmbeddingTable":
        dim, entries = binio.read_vector_table(path, binio.EMBEDDING_MAGIC)
        return cls(dim=dim, vectors={k: v.astype(np.float64) for k, v in entries.items()})

    def export_text(self, path: str) -> None:
        """Tab-separated ``key<TAB>v1 v2 ...`` lines for external projection tools."""
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self.vectors):
                values = " ".join(repr(float(v)) for v in self.vectors[key])
                fh.write(f"{key}\t{values}\n")


def _step_weights(g: KnowledgeGraph, prev: int, cur: int, p: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    nbrs = g.neighbors(cur)
    weights = np.empty(len(nbrs), dtype=np.float64)
    for k, x in enumerate(nbrs):
        if x == prev:
            weights[k] = 1.0 / p
        elif g.has_edge(int(x), prev):
            weights[k] = 1.0
        else:
            weights[k] = 1.0 / q
    return nbrs, weights


def next_step_distribution(g: KnowledgeGraph, prev: int, cur: int, p: float, q: float) -> np.ndarray:
    """Transition probabilities over ``g.neighbors(cur)`` given the previous hop.

    Weight 1/p to return to ``prev``, 1 for common neighbors of ``prev``
    and ``cur``, 1/q for two-hops-away candidates, normalized to sum 1.
    """
    if g.degree(cur) == 0:
        raise ValueError(f"node {cur} has no neighbors")
    if not g.has_edge(prev, cur):
        raise ValueError(f"prev={prev} is not adjacent to cur={cur}")
    _, weights = _step_weights(g, prev, cur, p, q)
    return weights / weights.sum()


def _walk_from(g: KnowledgeGraph, start: int, cfg: WalkConfig, rng: np.random.Generator) -> list[int]:
    walk = [start]
    nbrs = g.neighbors(start)
    if len(nbrs) == 0:
        return walk
    walk.append(int(nbrs[rng.integers(len(nbrs))]))
    while len(walk) < cfg.walk_length:
        prev, cur = walk[-2], walk[-1]
        nbrs = g.neighbors(cur)
        if len(nbrs) == 0:
            break
        _, weights = _step_weights(g, prev, cur, cfg.return_param, cfg.inout_param)
        cum = np.cumsum(weights)
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        walk.append(int(nbrs[min(k, len(nbrs) - 1)]))
    return walk


def generate_walks(g: KnowledgeGraph, cfg: WalkConfig) -> list[list[int]]:
    """``walks_per_node`` walks from every node, reproducible for a fixed seed.

    Each walk draws from its own derived RNG stream (seed, round, node), so
    the result would be identical under any parallel schedule.
    """
    if g.num_nodes == 0:
        raise ValueError("cannot walk an empty graph")
    walks: list[list[int]] = []
    for walk_round in range(cfg.walks_per_node):
        for node in range(g.num_nodes):
            rng = np.random.default_rng(derive_seed(cfg.seed, "walk", walk_round, node))
            walks.append(_walk_from(g, node, cfg, rng))
    return walks


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class SkipGramTrainer:
    """Skip-gram with negative sampling over pre-generated walks.

    Input vectors start uniform in [-0.5/dim, +0.5/dim], context vectors at
    zero, so an untrained table equals its initialization exactly.  Kept as
    a class so callers can observe per-epoch state (losses, both vector
    sides).
    """

    def __init__(self, walks: Sequence[Sequence[int]], cfg: SkipGramConfig, seed: int, n_nodes: int | None = None):
        if not walks:
            raise ValueError("cannot train on an empty walk set")
        self.cfg = cfg
        max_id = max(max(w) for w in walks)
        self.n_nodes = max(n_nodes or 0, max_id + 1)
        self.walks = [list(w) for w in walks]

        init_rng = np.random.default_rng(derive_seed(seed, "init"))
        scale = 0.5 / cfg.dim
        self.w_in = init_rng.uniform(-scale, scale, size=(self.n_nodes, cfg.dim))
        self.w_ctx = np.zeros((self.n_nodes, cfg.dim))

        counts = Counter()
        for w in self.walks:
            counts.update(w)
        freq = np.zeros(self.n_nodes)
        for node, c in counts.items():
            freq[node] = c
        noise = freq**0.75
        self._noise_cum = np.cumsum(noise / noise.sum())

        self._rng = np.random.default_rng(derive_seed(seed, "sgd"))
        self._positions_per_epoch = sum(len(w) for w in self.walks)
        self._total_positions = cfg.epochs * self._positions_per_epoch
        self._step = 0
        self.epoch_losses: list[float] = []

    def _lr(self) -> float:
        base = self.cfg.learning_rate
        frac = self._step / max(self._total_positions, 1)
        return max(base * (1.0 - frac), base * 1e-4)

    def run_epoch(self) -> float:
        """One pass over all walks; returns the epoch's mean pair objective."""
        cfg = self.cfg
        window = cfg.window
        n_neg = cfg.negatives_per_positive
        loss_sum = 0.0
        n_pairs = 0
        for walk in self.walks:
            length = len(walk)
            for i in range(length):
                center = walk[i]
                lo = max(0, i - window)
                hi = min(length, i + window + 1)
                ctx = walk[lo:i] + walk[i + 1 : hi]
                if not ctx:
                    self._step += 1
                    continue
                k = len(ctx)
                pos_ids = np.asarray(ctx, dtype=np.int64)
                if n_neg > 0:
                    draws = self._rng.random((k, n_neg))
                    neg_ids = np.searchsorted(self._noise_cum, draws, side="right")
                    np.clip(neg_ids, 0, self.n_nodes - 1, out=neg_ids)
                    # A drawn negative that equals its positive context is skipped.
                    neg_mask = (neg_ids != pos_ids[:, None]).astype(np.float64)
                    ids = np.concatenate([pos_ids, neg_ids.ravel()])
                    labels = np.concatenate([np.ones(k), np.zeros(k * n_neg)])
                    mask = np.concatenate([np.ones(k), neg_mask.ravel()])
                else:
                    ids = pos_ids
                    labels = np.ones(k)
                    mask = np.ones(k)

                v = self.w_in[center]
                u = self.w_ctx[ids]
                scores = u @ v
                sig = _sigmoid(scores)

                # Objective uses pre-update values: -log sig for positives,
                # -log(1 - sig) for kept negatives, summed per pair.
                with np.errstate(divide="ignore"):
                    pos_loss = np.logaddexp(0.0, -scores[:k])
                    neg_loss = np.logaddexp(0.0, scores[k:]) * mask[k:] if n_neg > 0 else 0.0
                loss_sum += float(pos_loss.sum() + (neg_loss.sum() if n_neg > 0 else 0.0))
                n_pairs += k

                g = (sig - labels) * mask
                grad_v = g @ u
                lr = self._lr()
                np.add.at(self.w_ctx, ids, (-lr * g)[:, None] * v[None, :])
                self.w_in[center] -= lr * grad_v
                self._step += 1
        mean = loss_sum / max(n_pairs, 1)
        self.epoch_losses.append(mean)
        return mean


def train_embeddings(
    walks: Sequence[Sequence[int]],
    cfg: SkipGramConfig,
    seed: int,
    graph: KnowledgeGraph | None = None,
) -> EmbeddingTable:
    """Train skip-gram over the walks and return input-side vectors.

    With ``graph`` given, vectors are keyed ``family/key`` and every graph
    node is present; otherwise keys are the stringified node ids seen in
    the walks.
    """
    trainer = SkipGramTrainer(walks, cfg, seed, n_nodes=graph.num_nodes if graph else None)
    for _ in range(cfg.epochs):
        trainer.run_epoch()
    vectors: dict[str, np.ndarray] = {}
    if graph is not None:
        if graph.num_nodes > trainer.n_nodes:
            raise DimensionMismatchError("walks do not cover the graph's node ids")
        for idx in range(graph.num_nodes):
            vectors[graph.node_key(idx)] = trainer.w_in[idx].copy()
    else:
        seen = sorted({node for walk in walks for node in walk})
        for idx in seen:
            vectors[str(idx)] = trainer.w_in[idx].copy()
    return EmbeddingTable(dim=cfg.dim, vectors=vectors)

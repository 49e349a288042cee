"""Evaluation metrics: classification accuracy, retrieval recall/median
rank, and the Davies-Bouldin cluster separability index."""

from __future__ import annotations

import json
import os
from typing import Mapping, Sequence

import numpy as np

from .errors import DatasetError, DimensionMismatchError


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of positions where prediction equals label."""
    preds = np.asarray(predictions)
    gold = np.asarray(labels)
    if preds.shape != gold.shape:
        raise DimensionMismatchError(f"predictions shape {preds.shape} vs labels shape {gold.shape}")
    if preds.size == 0:
        raise DatasetError("accuracy of an empty prediction list is undefined")
    return float((preds == gold).mean())


def _check_ranks(ranks: Sequence[int]) -> np.ndarray:
    arr = np.asarray(ranks)
    if arr.size == 0:
        raise DatasetError("empty rank list")
    if np.any(arr < 1):
        raise ValueError("ranks are 1-based and must be >= 1")
    return arr


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """Share of queries whose relevant item ranked in the top k."""
    arr = _check_ranks(ranks)
    if k < 1:
        raise ValueError("k must be >= 1")
    return float((arr <= k).mean())


def median_rank(ranks: Sequence[int]) -> float:
    """Median of the relevant-item ranks (mean of middles for even counts)."""
    arr = _check_ranks(ranks)
    return float(np.median(arr))


def davies_bouldin(embeddings: np.ndarray, labels: Sequence, p: float = 2.0) -> float:
    """Mean over clusters of the worst (S_i + S_j) / D_ij trade-off.

    S_i is the p-power mean deviation of cluster members from their
    centroid, D_ij the l_p distance between centroids.  Lower is better
    separated.  Singleton clusters have S_i = 0; coincident centroids are
    an error because their separation term vanishes.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatchError(f"embeddings must be 2-D, got shape {x.shape}")
    labels = np.asarray(labels)
    if labels.shape[0] != x.shape[0]:
        raise DimensionMismatchError("labels must align with embedding rows")
    if x.shape[0] < 2:
        raise DatasetError("need at least two points to measure separability")
    uniq = sorted(set(labels.tolist()), key=lambda v: str(v))
    k = len(uniq)
    if k < 2:
        raise DatasetError("need at least two clusters to measure separability")

    centroids = np.empty((k, x.shape[1]))
    dispersion = np.empty(k)
    for i, label in enumerate(uniq):
        members = x[labels == label]
        centroids[i] = members.mean(axis=0)
        dists = np.linalg.norm(members - centroids[i], ord=p, axis=1)
        dispersion[i] = (np.mean(dists**p)) ** (1.0 / p)

    worst = np.full(k, -np.inf)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            separation = float(np.linalg.norm(centroids[i] - centroids[j], ord=p))
            if separation == 0.0:
                raise ZeroDivisionError(
                    f"clusters {uniq[i]!r} and {uniq[j]!r} have coincident centroids"
                )
            worst[i] = max(worst[i], (dispersion[i] + dispersion[j]) / separation)
    return float(worst.mean())


def export_embeddings(
    path: str,
    ids: Sequence[str],
    labels: Sequence[str],
    vectors: np.ndarray,
) -> None:
    """Text export: one ``id<TAB>label<TAB>v1 v2 ...`` row per item.

    Values are written at float32 precision, which is what downstream
    projection tools consume.
    """
    vectors = np.atleast_2d(np.asarray(vectors))
    if not (len(ids) == len(labels) == vectors.shape[0]):
        raise DimensionMismatchError("ids, labels and vectors must align")
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(f"#embeddings dim={vectors.shape[1]}\n")
            for pid, label, vec in zip(ids, labels, vectors):
                values = " ".join(str(np.float32(v)) for v in vec)
                fh.write(f"{pid}\t{label}\t{values}\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def read_embedding_export(path: str) -> tuple[list[str], list[str], np.ndarray]:
    ids: list[str] = []
    labels: list[str] = []
    rows: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            pid, label, values = line.split("\t")
            ids.append(pid)
            labels.append(label)
            rows.append(np.array([float(v) for v in values.split()]))
    return ids, labels, np.stack(rows) if rows else np.empty((0, 0))


def write_metrics_report(txt_path: str, jsonl_path: str, metrics: Mapping[str, Mapping[str, float]]) -> None:
    """Metrics as ``section.key=value`` lines plus line-delimited JSON records."""
    with open(txt_path, "w", encoding="utf-8") as fh:
        for section in sorted(metrics):
            for key in sorted(metrics[section]):
                fh.write(f"{section}.{key}={metrics[section][key]}\n")
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for section in sorted(metrics):
            record = {"section": section}
            record.update({k: metrics[section][k] for k in sorted(metrics[section])})
            fh.write(json.dumps(record, sort_keys=True) + "\n")

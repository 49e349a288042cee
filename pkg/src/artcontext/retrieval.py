"""Cross-modal text/image retrieval in a shared 128-d cosine space.

Text side: tf-idf over comments and titles (smoothed idf, each segment
L2-normalized) concatenated with a one-hot ground-truth attribute.  Visual
side: the ingested feature vector concatenated with a frozen attribute
classifier's outputs.  Both sides project through a dense layer, tanh and
L2 normalization; training pulls matching pairs toward cosine 1 and pushes
every other in-batch pairing below the margin.
"""

from __future__ import annotations

import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    DenseLayer,
    Adam,
    derive_seed,
    l2_normalize,
    l2_normalize_backward,
    tanh_backward,
)
from .errors import DatasetError, DimensionMismatchError, FormatError
from .ingest import LabelSpace, PaintingRecord
from .models import FrozenClassifier

DEFAULT_COMMON_DIM = 128
DEFAULT_MARGIN = 0.1

_WORD_RE = re.compile(r"[a-z]+")

DIRECTIONS = ("text_to_image", "image_to_text")


def tokenize(text: str) -> list[str]:
    """Lowercased alphabetic tokens; digits and punctuation split words."""
    return _WORD_RE.findall(text.lower())


@dataclass
class TfIdfVocab:
    """Pruned vocabulary with document frequencies.

    Tokens are ordered by descending document frequency then
    lexicographically, so indices are reproducible.  Filtering keeps tokens
    whose total occurrence count in the corpus reached ``min_count``.
    """

    tokens: list[str]
    df: np.ndarray
    n_docs: int
    min_count: int

    def __post_init__(self):
        self.df = np.asarray(self.df, dtype=np.int64)
        if len(self.tokens) != self.df.shape[0]:
            raise DimensionMismatchError("token list and df table differ in length")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def vectorize(self, text: str) -> np.ndarray:
        """tf * smoothed-idf weights, L2-normalized (a zero vector stays zero)."""
        vec = np.zeros(len(self.tokens))
        counts = Counter(tokenize(text))
        if not counts:
            return vec
        idf = np.log((1.0 + self.n_docs) / (1.0 + self.df)) + 1.0
        for tok, tf in counts.items():
            idx = self._index.get(tok)
            if idx is not None:
                vec[idx] = tf * idf[idx]
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def save(self, path: str) -> None:
        tmp = f"{path}.tmp.{os.getpid()}"
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(f"#vocab corpus={self.n_docs} min_count={self.min_count}\n")
                for tok, df in zip(self.tokens, self.df):
                    fh.write(f"{tok} {int(df)}\n")
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.remove(tmp)

    @classmethod
    def load(cls, path: str) -> "TfIdfVocab":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            match = re.fullmatch(r"#vocab corpus=(\d+) min_count=(\d+)", header)
            if not match:
                raise FormatError(f"bad vocab header: {header!r}")
            tokens: list[str] = []
            dfs: list[int] = []
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise FormatError(f"line {lineno}: expected 'token df', got {line!r}")
                tokens.append(parts[0])
                dfs.append(int(parts[1]))
        return cls(tokens=tokens, df=np.array(dfs, dtype=np.int64), n_docs=int(match.group(1)), min_count=int(match.group(2)))


def build_tfidf_vocab(texts: Sequence[str], min_count: int) -> TfIdfVocab:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not texts:
        raise DatasetError("cannot build a vocabulary from an empty corpus")
    totals: Counter[str] = Counter()
    doc_freq: Counter[str] = Counter()
    for text in texts:
        tokens = tokenize(text)
        totals.update(tokens)
        doc_freq.update(set(tokens))
    kept = [tok for tok, c in totals.items() if c >= min_count]
    kept.sort(key=lambda tok: (-doc_freq[tok], tok))
    return TfIdfVocab(
        tokens=kept,
        df=np.array([doc_freq[tok] for tok in kept], dtype=np.int64),
        n_docs=len(texts),
        min_count=min_count,
    )


def encode_text(
    record: PaintingRecord,
    vocab_com: TfIdfVocab,
    vocab_tit: TfIdfVocab,
    label_space: LabelSpace,
    attribute_value: str | None = None,
) -> np.ndarray:
    """Comment tf-idf + title tf-idf + one-hot ground-truth attribute."""
    if attribute_value is None:
        attribute_value = getattr(record, label_space.family)
    one_hot = np.zeros(len(label_space))
    try:
        one_hot[label_space.index_of(attribute_value)] = 1.0
    except KeyError:
        pass  # no Unknown class to absorb it; leave the segment zero
    return np.concatenate([
        vocab_com.vectorize(record.comment),
        vocab_tit.vectorize(record.title),
        one_hot,
    ])


def encode_visual(feature: np.ndarray, classifier: FrozenClassifier) -> np.ndarray:
    """Base visual vector concatenated with the frozen classifier's scores."""
    feature = np.asarray(feature, dtype=np.float64)
    single = feature.ndim == 1
    scores = classifier.scores(feature)
    stacked = np.concatenate([np.atleast_2d(feature), scores], axis=1)
    return stacked[0] if single else stacked


@dataclass
class RetrievalConfig:
    batch_size: int = 28
    learning_rate: float = 0.0001
    epochs: int = 50
    seed: int = 0


class RetrievalModel:
    """Two projections into a common unit-norm space plus the margin."""

    kind = "retrieval"

    def __init__(
        self,
        visual_dim: int,
        text_dim: int,
        common_dim: int = DEFAULT_COMMON_DIM,
        margin: float = DEFAULT_MARGIN,
        seed: int = 0,
    ):
        self.visual_dim = visual_dim
        self.text_dim = text_dim
        self.common_dim = common_dim
        self.margin = margin
        self.f_h = DenseLayer(visual_dim, common_dim, seed=derive_seed(seed, "f_h"), name="f_h")
        self.f_q = DenseLayer(text_dim, common_dim, seed=derive_seed(seed, "f_q"), name="f_q")

    def parameters(self) -> list[np.ndarray]:
        return self.f_h.parameters() + self.f_q.parameters()

    def gradients(self) -> list[np.ndarray]:
        return self.f_h.gradients() + self.f_q.gradients()

    def zero_grad(self) -> None:
        self.f_h.zero_grad()
        self.f_q.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = self.f_h.named_tensors("f_h")
        out.update(self.f_q.named_tensors("f_q"))
        return out

    def load_state(self, tensors) -> None:
        for layer, prefix in ((self.f_h, "f_h"), (self.f_q, "f_q")):
            weight = np.asarray(tensors[f"{prefix}.weight"], dtype=np.float64)
            bias = np.asarray(tensors[f"{prefix}.bias"], dtype=np.float64)
            if weight.shape != layer.weight.shape:
                raise DimensionMismatchError(f"checkpoint tensor {prefix}.weight has shape {weight.shape}")
            layer.weight[...] = weight
            layer.bias[...] = bias

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "visual_dim": self.visual_dim,
            "text_dim": self.text_dim,
            "common_dim": self.common_dim,
            "margin": self.margin,
        }

    @classmethod
    def from_meta(cls, meta) -> "RetrievalModel":
        return cls(
            visual_dim=meta["visual_dim"],
            text_dim=meta["text_dim"],
            common_dim=meta["common_dim"],
            margin=meta["margin"],
        )

    # -- projections ------------------------------------------------------

    def project_visual(self, h: np.ndarray) -> np.ndarray:
        return _project(self.f_h, h)

    def project_text(self, q: np.ndarray) -> np.ndarray:
        return _project(self.f_q, q)


def _project(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    t = np.tanh(layer.forward(np.asarray(x, dtype=np.float64)))
    return l2_normalize(t)


def _project_with_cache(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.tanh(layer.forward(x))
    return l2_normalize(t), t


def _project_backward(layer: DenseLayer, x: np.ndarray, t: np.ndarray, grad_y: np.ndarray) -> None:
    grad_t = l2_normalize_backward(t, grad_y)
    grad_pre = tanh_backward(t, grad_t)
    layer.backward(x, grad_pre)


def _pair_loss_terms(sims: np.ndarray, margin: float) -> tuple[float, np.ndarray]:
    """Mean loss over all ordered (visual k, text j) pairs and d loss / d sims."""
    b = sims.shape[0]
    diag = np.eye(b, dtype=bool)
    active = (sims - margin > 0.0) & ~diag
    loss = ((1.0 - sims[diag]).sum() + (sims[active] - margin).sum()) / (b * b)
    dsims = np.zeros_like(sims)
    dsims[active] = 1.0
    dsims[diag] = -1.0
    dsims /= b * b
    return float(loss), dsims


def retrieval_loss(model: RetrievalModel, visual: np.ndarray, text: np.ndarray) -> float:
    """Batch loss without gradients; row i of each side is a matching pair."""
    visual, text = _check_pairs(visual, text)
    sims = model.project_visual(visual) @ model.project_text(text).T
    loss, _ = _pair_loss_terms(sims, model.margin)
    return loss


def _check_pairs(visual: np.ndarray, text: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    visual = np.atleast_2d(np.asarray(visual, dtype=np.float64))
    text = np.atleast_2d(np.asarray(text, dtype=np.float64))
    if visual.shape[0] != text.shape[0]:
        raise DimensionMismatchError(
            f"paired batch sides differ: {visual.shape[0]} visual vs {text.shape[0]} text"
        )
    if visual.shape[0] < 2:
        raise DatasetError("a retrieval batch needs at least 2 pairs to form negatives")
    return visual, text


def retrieval_batch_step(model: RetrievalModel, visual: np.ndarray, text: np.ndarray) -> float:
    """Forward + gradient accumulation for one batch; returns the loss."""
    visual, text = _check_pairs(visual, text)
    y_h, t_h = _project_with_cache(model.f_h, visual)
    y_q, t_q = _project_with_cache(model.f_q, text)
    sims = y_h @ y_q.T
    loss, dsims = _pair_loss_terms(sims, model.margin)
    _project_backward(model.f_h, visual, t_h, dsims @ y_q)
    _project_backward(model.f_q, text, t_q, dsims.T @ y_h)
    return loss


def train_retrieval(
    model: RetrievalModel,
    visual: np.ndarray,
    text: np.ndarray,
    config: RetrievalConfig,
) -> list[float]:
    """Adam training over aligned pairs; returns per-epoch mean losses.

    The attribute classifier is frozen by construction: its scores were
    baked into the visual vectors before training starts.
    """
    visual, text = _check_pairs(visual, text)
    if config.batch_size < 2:
        raise DatasetError("batch_size must be >= 2: negatives come from within the batch")
    n = visual.shape[0]
    optimizer = Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(derive_seed(config.seed, "retrieval-shuffle"))
    history: list[float] = []
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        count = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            if len(idx) < 2:
                continue  # a lone trailing pair has no negatives
            model.zero_grad()
            loss = retrieval_batch_step(model, visual[idx], text[idx])
            optimizer.step(model.parameters(), model.gradients())
            loss_sum += loss * len(idx)
            count += len(idx)
        history.append(loss_sum / max(count, 1))
    return history


def similarity_matrix(model: RetrievalModel, visual: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Cosine similarities, entry [i, j] = sim(project(visual_i), project(text_j))."""
    visual = np.atleast_2d(np.asarray(visual, dtype=np.float64))
    text = np.atleast_2d(np.asarray(text, dtype=np.float64))
    return model.project_visual(visual) @ model.project_text(text).T


def rank(
    model: RetrievalModel,
    queries: np.ndarray,
    gallery: np.ndarray,
    direction: str,
) -> np.ndarray:
    """Gallery indices sorted by descending similarity per query row.

    Ties break toward the lower gallery index so rankings are
    deterministic.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if gallery.shape[0] == 0:
        raise DatasetError("gallery is empty")
    if direction == "text_to_image":
        sims = similarity_matrix(model, gallery, queries).T
    else:
        sims = similarity_matrix(model, queries, gallery)
    return np.argsort(-sims, axis=1, kind="stable")


def relevant_ranks(ranked: np.ndarray, relevant: Sequence[int] | None = None) -> list[int]:
    """1-based rank of each query's relevant gallery item (default: aligned ids)."""
    n = ranked.shape[0]
    targets = list(relevant) if relevant is not None else list(range(n))
    out = []
    for i in range(n):
        pos = int(np.nonzero(ranked[i] == targets[i])[0][0])
        out.append(pos + 1)
    return out

"""Minimal differentiable-layer toolkit.

Dense layers, the activations and losses the trainers need, SGD-momentum
and Adam, and a central finite-difference gradient checker.  Everything is
float64; float32 appears only in file formats.  Forward functions accept a
single vector or a batch of row vectors; gradients accumulate into layer
buffers and are averaged over the batch by the callers.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError


def derive_seed(seed: int, *parts) -> int:
    """Stable 64-bit stream id for (seed, labels...), independent of order of creation."""
    text = "|".join([str(seed), *map(str, parts)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _check_last_dim(x: np.ndarray, dim: int, what: str) -> None:
    if x.shape[-1] != dim:
        raise DimensionMismatchError(f"{what}: got last dim {x.shape[-1]}, expected {dim}")


class DenseLayer:
    """Affine map ``W x + b`` with gradient accumulation buffers."""

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0, name: str = "dense"):
        rng = np.random.default_rng(seed)
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        self.bias = np.zeros(out_dim)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        _check_last_dim(x, self.in_dim, f"{self.name}.forward input")
        return x @ self.weight.T + self.bias

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads for inputs ``x``; return grad wrt x."""
        x = np.asarray(x, dtype=np.float64)
        upstream = np.asarray(upstream, dtype=np.float64)
        _check_last_dim(x, self.in_dim, f"{self.name}.backward input")
        _check_last_dim(upstream, self.out_dim, f"{self.name}.backward upstream")
        if x.ndim == 1:
            self.grad_weight += np.outer(upstream, x)
            self.grad_bias += upstream
        else:
            self.grad_weight += upstream.T @ x
            self.grad_bias += upstream.sum(axis=0)
        return upstream @ self.weight

    def zero_grad(self) -> None:
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)

    def scale_grad(self, factor: float) -> None:
        self.grad_weight *= factor
        self.grad_bias *= factor

    def parameters(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_weight, self.grad_bias]

    def named_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


# -- activations ---------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(x) > 0.0, upstream, 0.0)


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def tanh_backward(y: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Backward through tanh given its *output* y."""
    return upstream * (1.0 - np.asarray(y) ** 2)


def l2_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot l2-normalize a zero vector")
    return x / norms


def l2_normalize_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot l2-normalize a zero vector")
    y = x / norms
    inner = np.sum(upstream * y, axis=-1, keepdims=True)
    return (upstream - inner * y) / norms


# -- losses ----------------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row cross-entropy losses and gradients for a (n, C) batch."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2:
        raise DimensionMismatchError(f"logits must be 2-D, got shape {z.shape}")
    n, c = z.shape
    if labels.shape != (n,):
        raise DimensionMismatchError(f"labels shape {labels.shape} does not match batch {n}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise IndexError(f"label out of range for {c} classes")
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    sums = e.sum(axis=1, keepdims=True)
    probs = e / sums
    rows = np.arange(n)
    losses = np.log(sums[:, 0]) - (z[rows, labels] - m[:, 0])
    grads = probs
    grads[rows, labels] -= 1.0
    return losses, grads


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable -log softmax(logits)[label] and its gradient (softmax - onehot)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionMismatchError(f"logits must be 1-D, got shape {z.shape}")
    losses, grads = softmax_cross_entropy(z[None, :], np.array([label]))
    return float(losses[0]), grads[0]


def smooth_l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean elementwise smooth-L1: quadratic inside |d| <= 1, linear outside."""
    p = np.asarray(pred, dtype=np.float64)
    u = np.asarray(target, dtype=np.float64)
    if p.shape != u.shape or p.ndim != 1 or p.size < 1:
        raise DimensionMismatchError(f"pred shape {p.shape} vs target shape {u.shape}")
    d = p - u
    a = np.abs(d)
    quad = a <= 1.0
    per = np.where(quad, 0.5 * d * d, a - 0.5)
    grad = np.where(quad, d, np.sign(d)) / p.size
    return float(per.mean()), grad


def smooth_l1_rows(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise smooth-L1 over a (n, dim) batch; grads are per-row-mean scaled."""
    p = np.asarray(pred, dtype=np.float64)
    u = np.asarray(target, dtype=np.float64)
    if p.shape != u.shape or p.ndim != 2:
        raise DimensionMismatchError(f"pred shape {p.shape} vs target shape {u.shape}")
    d = p - u
    a = np.abs(d)
    quad = a <= 1.0
    per = np.where(quad, 0.5 * d * d, a - 0.5)
    grads = np.where(quad, d, np.sign(d)) / p.shape[1]
    return per.mean(axis=1), grads


def cosine_margin_loss(
    a: np.ndarray,
    b: np.ndarray,
    matching: bool,
    margin: float = 0.1,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Contrastive cosine loss: pull matching pairs to cos 1, push others below the margin.

    Returns (loss, grad_a, grad_b); gradients vanish in the clamped region
    of non-matching pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_margin_loss requires nonzero vectors")
    cos = float(a @ b / (na * nb))
    dcos_da = b / (na * nb) - cos * a / (na * na)
    dcos_db = a / (na * nb) - cos * b / (nb * nb)
    if matching:
        return 1.0 - cos, -dcos_da, -dcos_db
    slack = cos - margin
    if slack <= 0.0:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    return slack, dcos_da, dcos_db


# -- optimizers ------------------------------------------------------------


class SgdMomentum:
    """v <- mu v + g; theta <- theta - lr v."""

    kind = "sgd_momentum"

    def __init__(self, params: Sequence[np.ndarray], lr: float = 0.001, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self._velocity = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        _check_slots(params, grads, self._velocity)
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam:
    """Bias-corrected adaptive moments."""

    kind = "adam"

    def __init__(
        self,
        params: Sequence[np.ndarray],
        lr: float = 0.0001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        _check_slots(params, grads, self._m)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _check_slots(params, grads, slots) -> None:
    if not (len(params) == len(grads) == len(slots)):
        raise DimensionMismatchError(
            f"optimizer got {len(params)} params, {len(grads)} grads for {len(slots)} slots"
        )
    for p, g, s in zip(params, grads, slots):
        if p.shape != g.shape or p.shape != s.shape:
            raise DimensionMismatchError(f"parameter/grad/slot shape mismatch: {p.shape}/{g.shape}/{s.shape}")


def make_optimizer(kind: str, params: Sequence[np.ndarray], **hyper) -> SgdMomentum | Adam:
    if kind == "sgd_momentum":
        return SgdMomentum(params, **hyper)
    if kind == "adam":
        return Adam(params, **hyper)
    raise ValueError(f"unknown optimizer kind {kind!r}")


# -- verification ------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[], tuple[float, list[np.ndarray]]],
    params: Sequence[np.ndarray],
    eps: float = 1e-5,
    abs_floor: float = 1e-6,
) -> float:
    """Max relative error between analytic grads and central differences.

    ``loss_fn`` recomputes the loss from the current parameter values and
    returns (loss, grads aligned with ``params``).  Parameters are
    perturbed in place and restored.
    """
    _, analytic = loss_fn()
    if len(analytic) != len(params):
        raise DimensionMismatchError(f"loss_fn returned {len(analytic)} grads for {len(params)} params")
    worst = 0.0
    for p, g in zip(params, analytic):
        flat_p = p.reshape(-1)
        flat_g = np.asarray(g).reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            plus, _ = loss_fn()
            flat_p[i] = orig - eps
            minus, _ = loss_fn()
            flat_p[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            denom = max(abs(numeric), abs(flat_g[i]), abs_floor)
            worst = max(worst, abs(numeric - flat_g[i]) / denom)
    return worst

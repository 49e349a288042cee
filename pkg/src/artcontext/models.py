"""The two context-aware embedding trainers.

Both models share a trainable dense adapter ("trunk") over precomputed
visual features.  The multi-task model attaches one classification head
per attribute family and minimizes the lambda-weighted sum of per-task
cross-entropies.  The knowledge-graph model pairs one classifier head with
a linear encoder that regresses frozen node embeddings under smooth-L1,
so graph context is distilled into the trunk.  At test time only the
trunk output is used, so unseen paintings need no graph node.

Training loops are deterministic: layer initialization draws from
per-layer-name seed streams and batch shuffling from the run seed, so two
runs with one seed produce bitwise-identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import (
    DenseLayer,
    SgdMomentum,
    derive_seed,
    relu,
    relu_backward,
    smooth_l1_rows,
    softmax_cross_entropy,
)
from .errors import DatasetError, DimensionMismatchError
from .ingest import DatasetSplit, FeatureStore, LabelSpace
from .node2vec import EmbeddingTable

DEFAULT_TRUNK_DIM = 2048
DEFAULT_CONTEXT_DIM = 128


@dataclass
class TrainConfig:
    batch_size: int = 28
    learning_rate: float = 0.001
    momentum: float = 0.9
    patience: int = 30
    max_epochs: int = 200
    seed: int = 0


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    best_metric: float


@dataclass
class ClassificationDataset:
    """Feature matrix plus integer labels per task, aligned by row."""

    ids: list[str]
    features: np.ndarray
    labels: dict[str, np.ndarray]

    @property
    def n(self) -> int:
        return self.features.shape[0]


def build_classification_dataset(
    split: DatasetSplit,
    store: FeatureStore,
    label_spaces: Mapping[str, LabelSpace],
) -> ClassificationDataset:
    ids = [rec.id for rec in split.records]
    features = store.matrix_for(ids)
    labels = {}
    for task, space in label_spaces.items():
        labels[task] = np.array([space.label_for_record(rec) for rec in split.records], dtype=np.int64)
    return ClassificationDataset(ids=ids, features=features, labels=labels)


def painting_context_matrix(table: EmbeddingTable, ids: Sequence[str]) -> np.ndarray:
    """Stack the node vectors for training paintings; absent ids are an error."""
    return table.matrix_for([f"painting/{pid}" for pid in ids])


class TrunkAdapter:
    """Dense adapter + ReLU standing in for the visual backbone's last stage."""

    def __init__(self, in_dim: int, trunk_dim: int = DEFAULT_TRUNK_DIM, seed: int = 0):
        self.dense = DenseLayer(in_dim, trunk_dim, seed=derive_seed(seed, "trunk"), name="trunk")
        self.trunk_dim = trunk_dim
        self.in_dim = in_dim

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pre = self.dense.forward(x)
        return relu(pre), pre


class TaskHead:
    """Per-task classifier: dense layer followed by ReLU (optional flag)."""

    def __init__(self, task: str, trunk_dim: int, n_classes: int, seed: int = 0, apply_relu: bool = True):
        self.task = task
        self.n_classes = n_classes
        self.apply_relu = apply_relu
        self.dense = DenseLayer(trunk_dim, n_classes, seed=derive_seed(seed, "head", task), name=f"head.{task}")

    def forward(self, emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pre = self.dense.forward(emb)
        logits = relu(pre) if self.apply_relu else pre
        return logits, pre


class MTLModel:
    """Shared trunk, one head per task, lambda-weighted cross-entropy."""

    kind = "mtl"

    def __init__(
        self,
        in_dim: int,
        class_counts: Mapping[str, int],
        trunk_dim: int = DEFAULT_TRUNK_DIM,
        lambdas: Mapping[str, float] | None = None,
        seed: int = 0,
        head_relu: bool = True,
    ):
        if not class_counts:
            raise ValueError("need at least one task")
        self.task_order = list(class_counts)
        if lambdas is None:
            lambdas = {t: 1.0 / len(self.task_order) for t in self.task_order}
        total = sum(lambdas[t] for t in self.task_order)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"task weights must sum to 1, got {total!r}")
        self.lambdas = dict(lambdas)
        self.head_relu = head_relu
        self.trunk = TrunkAdapter(in_dim, trunk_dim, seed=seed)
        self.heads = {
            t: TaskHead(t, trunk_dim, class_counts[t], seed=seed, apply_relu=head_relu)
            for t in self.task_order
        }

    # -- plumbing --------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = self.trunk.dense.parameters()
        for t in self.task_order:
            out += self.heads[t].dense.parameters()
        return out

    def gradients(self) -> list[np.ndarray]:
        out = self.trunk.dense.gradients()
        for t in self.task_order:
            out += self.heads[t].dense.gradients()
        return out

    def zero_grad(self) -> None:
        self.trunk.dense.zero_grad()
        for head in self.heads.values():
            head.dense.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = self.trunk.dense.named_tensors("trunk")
        for t in self.task_order:
            out.update(self.heads[t].dense.named_tensors(f"head.{t}"))
        return out

    def load_state(self, tensors: Mapping[str, np.ndarray]) -> None:
        _copy_layer(self.trunk.dense, tensors, "trunk")
        for t in self.task_order:
            _copy_layer(self.heads[t].dense, tensors, f"head.{t}")

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.trunk.in_dim,
            "trunk_dim": self.trunk.trunk_dim,
            "class_counts": {t: self.heads[t].n_classes for t in self.task_order},
            "lambdas": self.lambdas,
            "head_relu": self.head_relu,
        }

    @classmethod
    def from_meta(cls, meta: Mapping) -> "MTLModel":
        return cls(
            in_dim=meta["in_dim"],
            class_counts=meta["class_counts"],
            trunk_dim=meta["trunk_dim"],
            lambdas=meta["lambdas"],
            head_relu=meta["head_relu"],
        )

    # -- forward ----------------------------------------------------------

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Shared embedding and per-task logits; one trunk pass feeds every head."""
        emb, _ = self.trunk.forward(x)
        logits = {t: self.heads[t].forward(emb)[0] for t in self.task_order}
        return emb, logits


def mtl_forward(model: MTLModel, feature: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    return model.forward(feature)


def mtl_loss(model: MTLModel, features: np.ndarray, labels: Mapping[str, np.ndarray]) -> float:
    """Lambda-weighted sum of per-task mean cross-entropies (no grads)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    missing = [t for t in model.task_order if t not in labels]
    if missing:
        raise DatasetError(f"batch is missing labels for tasks: {missing}")
    emb, logits = model.forward(features)
    total = 0.0
    for t in model.task_order:
        losses, _ = softmax_cross_entropy(logits[t], np.atleast_1d(labels[t]))
        total += model.lambdas[t] * float(losses.mean())
    return total


def _mtl_batch(model: MTLModel, x: np.ndarray, labels: Mapping[str, np.ndarray]) -> tuple[float, dict[str, float]]:
    """Forward/backward for one batch; grads are batch means."""
    n = x.shape[0]
    emb, emb_pre = model.trunk.forward(x)
    grad_emb = np.zeros_like(emb)
    total = 0.0
    per_task: dict[str, float] = {}
    for t in model.task_order:
        head = model.heads[t]
        logits, pre = head.forward(emb)
        losses, dlogits = softmax_cross_entropy(logits, labels[t])
        lam = model.lambdas[t]
        task_loss = float(losses.mean())
        per_task[t] = task_loss
        total += lam * task_loss
        dlogits *= lam / n
        if head.apply_relu:
            dlogits = relu_backward(pre, dlogits)
        grad_emb += head.dense.backward(emb, dlogits)
    dpre = relu_backward(emb_pre, grad_emb)
    model.trunk.dense.backward(x, dpre)
    return total, per_task


class KGMModel:
    """Classifier plus a linear encoder regressing frozen context vectors."""

    kind = "kgm"

    def __init__(
        self,
        in_dim: int,
        n_classes: int,
        task: str,
        trunk_dim: int = DEFAULT_TRUNK_DIM,
        context_dim: int = DEFAULT_CONTEXT_DIM,
        lambda_classifier: float = 0.9,
        lambda_encoder: float = 0.1,
        seed: int = 0,
        head_relu: bool = True,
    ):
        self.task = task
        self.lambda_classifier = lambda_classifier
        self.lambda_encoder = lambda_encoder
        self.context_dim = context_dim
        self.head_relu = head_relu
        self.trunk = TrunkAdapter(in_dim, trunk_dim, seed=seed)
        self.classifier = TaskHead(task, trunk_dim, n_classes, seed=seed, apply_relu=head_relu)
        self.encoder = DenseLayer(trunk_dim, context_dim, seed=derive_seed(seed, "encoder"), name="encoder")

    def parameters(self) -> list[np.ndarray]:
        return (
            self.trunk.dense.parameters()
            + self.classifier.dense.parameters()
            + self.encoder.parameters()
        )

    def gradients(self) -> list[np.ndarray]:
        return (
            self.trunk.dense.gradients()
            + self.classifier.dense.gradients()
            + self.encoder.gradients()
        )

    def zero_grad(self) -> None:
        self.trunk.dense.zero_grad()
        self.classifier.dense.zero_grad()
        self.encoder.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = self.trunk.dense.named_tensors("trunk")
        out.update(self.classifier.dense.named_tensors(f"head.{self.task}"))
        out.update(self.encoder.named_tensors("encoder"))
        return out

    def load_state(self, tensors: Mapping[str, np.ndarray]) -> None:
        _copy_layer(self.trunk.dense, tensors, "trunk")
        _copy_layer(self.classifier.dense, tensors, f"head.{self.task}")
        _copy_layer(self.encoder, tensors, "encoder")

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.trunk.in_dim,
            "trunk_dim": self.trunk.trunk_dim,
            "task": self.task,
            "n_classes": self.classifier.n_classes,
            "context_dim": self.context_dim,
            "lambda_classifier": self.lambda_classifier,
            "lambda_encoder": self.lambda_encoder,
            "head_relu": self.head_relu,
        }

    @classmethod
    def from_meta(cls, meta: Mapping) -> "KGMModel":
        return cls(
            in_dim=meta["in_dim"],
            n_classes=meta["n_classes"],
            task=meta["task"],
            trunk_dim=meta["trunk_dim"],
            context_dim=meta["context_dim"],
            lambda_classifier=meta["lambda_classifier"],
            lambda_encoder=meta["lambda_encoder"],
            head_relu=meta["head_relu"],
        )

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        emb, _ = self.trunk.forward(x)
        logits, _ = self.classifier.forward(emb)
        projection = self.encoder.forward(emb)
        return logits, projection, emb


def kgm_forward(model: KGMModel, feature: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return model.forward(feature)


def kgm_total_loss(
    model: KGMModel,
    features: np.ndarray,
    labels: np.ndarray,
    context: np.ndarray | None,
) -> float:
    """lambda_c * mean cross-entropy + lambda_e * mean smooth-L1 to the frozen context."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.atleast_1d(labels)
    logits, projection, _ = model.forward(features)
    losses, _ = softmax_cross_entropy(logits, labels)
    total = model.lambda_classifier * float(losses.mean())
    if model.lambda_encoder != 0.0:
        if context is None:
            raise DatasetError("encoder loss requires context vectors for every painting")
        context = np.atleast_2d(np.asarray(context, dtype=np.float64))
        if context.shape != projection.shape:
            raise DimensionMismatchError(
                f"context shape {context.shape} does not match projection {projection.shape}"
            )
        row_losses, _ = smooth_l1_rows(projection, context)
        total += model.lambda_encoder * float(row_losses.mean())
    return total


def _kgm_batch(
    model: KGMModel,
    x: np.ndarray,
    labels: np.ndarray,
    context: np.ndarray | None,
) -> tuple[float, dict[str, float]]:
    n = x.shape[0]
    emb, emb_pre = model.trunk.forward(x)
    logits, pre = model.classifier.forward(emb)
    losses, dlogits = softmax_cross_entropy(logits, labels)
    loss_c = float(losses.mean())
    dlogits *= model.lambda_classifier / n
    if model.classifier.apply_relu:
        dlogits = relu_backward(pre, dlogits)
    grad_emb = model.classifier.dense.backward(emb, dlogits)

    loss_e = 0.0
    # lambda_e == 0 skips the encoder path entirely so the run is
    # bit-identical to a standalone classifier under the same seed.
    if model.lambda_encoder != 0.0:
        projection = model.encoder.forward(emb)
        row_losses, dproj = smooth_l1_rows(projection, context)
        loss_e = float(row_losses.mean())
        dproj = dproj * (model.lambda_encoder / n)
        grad_emb += model.encoder.backward(emb, dproj)

    dpre = relu_backward(emb_pre, grad_emb)
    model.trunk.dense.backward(x, dpre)
    total = model.lambda_classifier * loss_c + model.lambda_encoder * loss_e
    return total, {"loss_classifier": loss_c, "loss_encoder": loss_e}


def extract_embedding(model: MTLModel | KGMModel, feature: np.ndarray) -> np.ndarray:
    """Context-aware embedding: the trunk output alone.

    Valid for paintings that never entered the graph -- no table lookup,
    no encoder, no heads.
    """
    emb, _ = model.trunk.forward(np.asarray(feature, dtype=np.float64))
    return emb


# -- training loop -----------------------------------------------------------


def _snapshot(params: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [p.copy() for p in params]


def _restore(params: Sequence[np.ndarray], saved: Sequence[np.ndarray]) -> None:
    for p, s in zip(params, saved):
        p[...] = s


def _run_training(
    model,
    n_train: int,
    config: TrainConfig,
    batch_fn: Callable[[np.ndarray], tuple[float, dict[str, float]]],
    metric_fn: Callable[[], tuple[float, dict[str, float]]],
) -> TrainResult:
    """Shared epoch loop: seeded shuffling, SGD momentum, patience-based
    early stopping on the validation metric, best-epoch parameter restore."""
    if n_train == 0:
        raise DatasetError("training split is empty")
    optimizer = SgdMomentum(model.parameters(), lr=config.learning_rate, momentum=config.momentum)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    history: list[dict] = []
    best_metric = -np.inf
    best_epoch = -1
    best_params: list[np.ndarray] | None = None
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(n_train)
        loss_sum = 0.0
        extra_sums: dict[str, float] = {}
        for start in range(0, n_train, config.batch_size):
            batch = perm[start : start + config.batch_size]
            model.zero_grad()
            loss, extras = batch_fn(batch)
            optimizer.step(model.parameters(), model.gradients())
            loss_sum += loss * len(batch)
            for key, value in extras.items():
                extra_sums[key] = extra_sums.get(key, 0.0) + value * len(batch)
        metric, metric_extras = metric_fn()
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / n_train,
            "val_metric": metric,
        }
        row.update({f"train_{k}": v / n_train for k, v in extra_sums.items()})
        row.update(metric_extras)
        history.append(row)
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_params = _snapshot(model.parameters())
            wait = 0
        else:
            wait += 1
        if wait >= config.patience:
            break
    if best_params is not None:
        _restore(model.parameters(), best_params)
    return TrainResult(history=history, best_epoch=best_epoch, best_metric=best_metric)


def _predictions(logits: np.ndarray) -> np.ndarray:
    return logits.argmax(axis=1)


def mtl_task_accuracies(model: MTLModel, ds: ClassificationDataset) -> dict[str, float]:
    _, logits = model.forward(ds.features)
    return {
        t: float((_predictions(logits[t]) == ds.labels[t]).mean())
        for t in model.task_order
    }


def train_mtl(model: MTLModel, train: ClassificationDataset, val: ClassificationDataset, config: TrainConfig) -> TrainResult:
    """SGD-momentum training of all tasks jointly; monitors mean task accuracy."""
    for t in model.task_order:
        if t not in train.labels or t not in val.labels:
            raise DatasetError(f"missing labels for task {t!r}")

    def batch_fn(idx: np.ndarray) -> tuple[float, dict[str, float]]:
        labels = {t: train.labels[t][idx] for t in model.task_order}
        return _mtl_batch(model, train.features[idx], labels)

    def metric_fn() -> tuple[float, dict[str, float]]:
        accs = mtl_task_accuracies(model, val)
        mean_acc = float(np.mean([accs[t] for t in model.task_order]))
        return mean_acc, {f"val_acc_{t}": accs[t] for t in model.task_order}

    return _run_training(model, train.n, config, batch_fn, metric_fn)


def kgm_accuracy(model: KGMModel, ds: ClassificationDataset) -> float:
    logits, _, _ = model.forward(ds.features)
    return float((_predictions(logits) == ds.labels[model.task]).mean())


def train_kgm(
    model: KGMModel,
    train: ClassificationDataset,
    val: ClassificationDataset,
    context_table: EmbeddingTable | None,
    config: TrainConfig,
) -> TrainResult:
    """Joint classifier + encoder training; monitors validation accuracy.

    Context vectors are constants: nothing is ever written back to the
    table, and no gradient reaches it.
    """
    if model.task not in train.labels or model.task not in val.labels:
        raise DatasetError(f"missing labels for task {model.task!r}")
    context: np.ndarray | None = None
    if model.lambda_encoder != 0.0:
        if context_table is None:
            raise DatasetError("training with a nonzero encoder weight requires a context table")
        context = painting_context_matrix(context_table, train.ids)
        if context.shape[1] != model.context_dim:
            raise DimensionMismatchError(
                f"context table dim {context.shape[1]} != encoder output dim {model.context_dim}"
            )

    labels = train.labels[model.task]

    def batch_fn(idx: np.ndarray) -> tuple[float, dict[str, float]]:
        ctx = context[idx] if context is not None else None
        return _kgm_batch(model, train.features[idx], labels[idx], ctx)

    def metric_fn() -> tuple[float, dict[str, float]]:
        acc = kgm_accuracy(model, val)
        return acc, {"val_acc": acc}

    return _run_training(model, train.n, config, batch_fn, metric_fn)


class FrozenClassifier:
    """Read-only attribute scorer used by the retrieval encoder.

    Wraps a trained model; ``scores`` returns the head's post-activation
    outputs (or softmax probabilities when configured).
    """

    def __init__(self, model: MTLModel | KGMModel, task: str | None = None, use_softmax: bool = False):
        if isinstance(model, MTLModel):
            if task is None:
                if len(model.task_order) != 1:
                    raise ValueError("task must be named for a multi-head model")
                task = model.task_order[0]
            self._head = model.heads[task]
        else:
            if task is not None and task != model.task:
                raise ValueError(f"model was trained for task {model.task!r}, not {task!r}")
            self._head = model.classifier
        self.model = model
        self.task = self._head.task
        self.use_softmax = use_softmax

    @property
    def n_classes(self) -> int:
        return self._head.n_classes

    def scores(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        emb, _ = self.model.trunk.forward(features)
        logits, _ = self._head.forward(emb)
        if self.use_softmax:
            m = logits.max(axis=1, keepdims=True)
            e = np.exp(logits - m)
            logits = e / e.sum(axis=1, keepdims=True)
        return logits


def _copy_layer(layer: DenseLayer, tensors: Mapping[str, np.ndarray], prefix: str) -> None:
    weight = np.asarray(tensors[f"{prefix}.weight"], dtype=np.float64)
    bias = np.asarray(tensors[f"{prefix}.bias"], dtype=np.float64)
    if weight.shape != layer.weight.shape or bias.shape != layer.bias.shape:
        raise DimensionMismatchError(
            f"checkpoint tensor {prefix} has shape {weight.shape}/{bias.shape}, "
            f"expected {layer.weight.shape}/{layer.bias.shape}"
        )
    layer.weight[...] = weight
    layer.bias[...] = bias

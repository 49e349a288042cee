"""Pipeline orchestration.

Stages: build-graph -> train-node2vec -> train-mtl / train-kgm ->
train-retrieval -> evaluate / cluster-quality / export-embeddings.
Each stage reads a YAML config, writes its artifacts atomically under
``output_dir``, and records a manifest with the hashes of its config
block, inputs and outputs.  Re-running with unchanged hashes is a no-op
unless --force.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import yaml

from . import binio, evalsuite, kgraph, node2vec, retrieval
from . import models as models_mod
from .errors import (
    ArtContextError,
    DatasetError,
    FormatError,
    SchemaError,
    StageError,
)
from .ingest import (
    DatasetSplit,
    FeatureStore,
    LabelSpace,
    build_label_space,
    derive_attributes,
    extract_title_keywords,
    load_dataset,
    read_features,
)

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "output_dir": "runs/default",
    "dataset": {"train": None, "val": None, "test": None, "delimiter": "\t"},
    "features": None,
    "labels": {"min_count": 10, "families": ["type", "school", "timeframe", "author"]},
    "graph": {"keyword_ngram_max": 3, "keyword_min_freq": None},
    "node2vec": {
        "p": 1.0,
        "q": 1.0,
        "walk_length": 80,
        "walks_per_node": 10,
        "dim": 128,
        "window": 10,
        "negatives": 5,
        "epochs": 5,
        "learning_rate": 0.025,
    },
    "mtl": {
        "trunk_dim": 2048,
        "lambdas": None,
        "batch_size": 28,
        "learning_rate": 0.001,
        "momentum": 0.9,
        "patience": 30,
        "max_epochs": 200,
        "head_relu": True,
    },
    "kgm": {
        "task": "author",
        "trunk_dim": 2048,
        "lambda_classifier": 0.9,
        "lambda_encoder": 0.1,
        "batch_size": 28,
        "learning_rate": 0.001,
        "momentum": 0.9,
        "patience": 30,
        "max_epochs": 200,
        "head_relu": True,
    },
    "retrieval": {
        "classifier": "kgm",
        "attribute": "author",
        "vocab_min_count": 10,
        "common_dim": 128,
        "margin": 0.1,
        "batch_size": 28,
        "learning_rate": 0.0001,
        "epochs": 50,
        "use_softmax_scores": False,
    },
    "evaluate": {"targets": ["mtl", "kgm", "retrieval"]},
    "cluster_quality": {"source": "kgm", "families": ["type", "school", "timeframe", "author"], "split": "train"},
    "export": {"source": "kgm", "family": "timeframe", "split": "test"},
}


class ConfigError(ArtContextError):
    pass


def _deep_merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str, overrides: list[str] | None = None, seed: int | None = None) -> dict:
    with open(path, encoding="utf-8") as fh:
        user = yaml.safe_load(fh) or {}
    if not isinstance(user, dict):
        raise ConfigError(f"config root must be a mapping, got {type(user).__name__}")
    cfg = _deep_merge(DEFAULT_CONFIG, user)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = yaml.safe_load(raw)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _cfg_path(cfg: dict, dotted: str) -> str:
    node = cfg
    for part in dotted.split("."):
        node = node.get(part) if isinstance(node, dict) else None
        if node is None:
            raise ConfigError(f"config key {dotted!r} is required for this stage")
    return str(node)


def _existing(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _artifact(out: str, filename: str, producer: str) -> str:
    path = os.path.join(out, filename)
    if not os.path.exists(path):
        raise StageError(f"missing artifact {filename}; run {producer} first")
    return path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _write_json(path: str, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_jsonl(path: str, rows: list[dict]) -> None:
    _write_text(path, "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows))


# -- shared stage helpers -----------------------------------------------------


def _load_split(cfg: dict, which: str) -> DatasetSplit:
    path = _existing(_cfg_path(cfg, f"dataset.{which}"), f"dataset.{which}")
    return load_dataset(path, which, delimiter=cfg["dataset"]["delimiter"])


def _load_features(cfg: dict) -> FeatureStore:
    path = _existing(_cfg_path(cfg, "features"), "features file")
    if binio.sniff_artifact_kind(path) != "features":
        raise FormatError(f"{path} is not a feature file (wrong magic)")
    return read_features(path)


def _build_label_spaces(train: DatasetSplit, cfg: dict) -> dict[str, LabelSpace]:
    min_count = int(cfg["labels"]["min_count"])
    return {
        family: build_label_space(train.records, family, min_count)
        for family in cfg["labels"]["families"]
    }


def _save_label_spaces(path: str, spaces: Mapping[str, LabelSpace]) -> None:
    payload = {
        family: {"classes": space.classes, "unknown_index": space.unknown_index}
        for family, space in spaces.items()
    }
    _write_json(path, payload)


def _load_label_spaces(path: str) -> dict[str, LabelSpace]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return {
        family: LabelSpace(family=family, classes=entry["classes"], unknown_index=entry["unknown_index"])
        for family, entry in payload.items()
    }


def _load_model(out: str, kind: str):
    ckpt = _artifact(out, f"{kind}.ckpt", f"train-{kind}")
    if binio.sniff_artifact_kind(ckpt) != "checkpoint":
        raise FormatError(f"{ckpt} is not a model checkpoint (wrong magic)")
    meta_path = _artifact(out, f"{kind}.meta.json", f"train-{kind}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    cls = models_mod.MTLModel if meta["kind"] == "mtl" else models_mod.KGMModel
    model = cls.from_meta(meta)
    model.load_state(binio.read_checkpoint(ckpt))
    return model


# -- stages -------------------------------------------------------------------


def _inputs_build_graph(cfg: dict, out: str) -> dict[str, str]:
    return {"dataset.train": _existing(_cfg_path(cfg, "dataset.train"), "dataset.train")}


def _run_build_graph(cfg: dict, out: str) -> dict[str, str]:
    gcfg = cfg["graph"]
    if gcfg.get("keyword_min_freq") is None:
        raise ConfigError("graph.keyword_min_freq must be set (calibrate per corpus)")
    train = _load_split(cfg, "train")
    n_max = int(gcfg["keyword_ngram_max"])
    keywords = extract_title_keywords(
        [rec.title for rec in train.records], n_max, int(gcfg["keyword_min_freq"])
    )
    derived = derive_attributes(train.records, keywords, n_max)
    graph = kgraph.build_graph(train.records, derived)
    graph_path = os.path.join(out, "graph.txt")
    kgraph.save_graph(graph, graph_path)
    kw_path = os.path.join(out, "keywords.txt")
    _write_text(kw_path, "".join(f"{k}\t{keywords[k]}\n" for k in sorted(keywords)))
    stats = kgraph.graph_stats(graph)
    print(f"graph: {stats.nodes} nodes, {stats.edges} edges")
    for family in kgraph.FAMILIES:
        print(f"  {family}: {stats.families.get(family, 0)}")
    return {"graph": graph_path, "keywords": kw_path}


def _inputs_train_node2vec(cfg: dict, out: str) -> dict[str, str]:
    return {"graph": _artifact(out, "graph.txt", "build-graph")}


def _run_train_node2vec(cfg: dict, out: str) -> dict[str, str]:
    ncfg = cfg["node2vec"]
    graph = kgraph.load_graph(os.path.join(out, "graph.txt"))
    walk_cfg = node2vec.WalkConfig(
        return_param=float(ncfg["p"]),
        inout_param=float(ncfg["q"]),
        walk_length=int(ncfg["walk_length"]),
        walks_per_node=int(ncfg["walks_per_node"]),
        seed=int(cfg["seed"]),
    )
    walks = node2vec.generate_walks(graph, walk_cfg)
    sg_cfg = node2vec.SkipGramConfig(
        dim=int(ncfg["dim"]),
        window=int(ncfg["window"]),
        negatives_per_positive=int(ncfg["negatives"]),
        epochs=int(ncfg["epochs"]),
        learning_rate=float(ncfg["learning_rate"]),
    )
    table = node2vec.train_embeddings(walks, sg_cfg, int(cfg["seed"]), graph=graph)
    emb_path = os.path.join(out, "embeddings.bin")
    table.save(emb_path)
    print(f"embeddings: {len(table)} nodes, dim {table.dim}")
    return {"embeddings": emb_path}


def _inputs_train_mtl(cfg: dict, out: str) -> dict[str, str]:
    return {
        "dataset.train": _existing(_cfg_path(cfg, "dataset.train"), "dataset.train"),
        "dataset.val": _existing(_cfg_path(cfg, "dataset.val"), "dataset.val"),
        "features": _existing(_cfg_path(cfg, "features"), "features file"),
    }


def _run_train_mtl(cfg: dict, out: str) -> dict[str, str]:
    mcfg = cfg["mtl"]
    train = _load_split(cfg, "train")
    val = _load_split(cfg, "val")
    store = _load_features(cfg)
    spaces = _build_label_spaces(train, cfg)
    train_ds = models_mod.build_classification_dataset(train, store, spaces)
    val_ds = models_mod.build_classification_dataset(val, store, spaces)
    model = models_mod.MTLModel(
        in_dim=store.dim,
        class_counts={f: len(spaces[f]) for f in cfg["labels"]["families"]},
        trunk_dim=int(mcfg["trunk_dim"]),
        lambdas=mcfg["lambdas"],
        seed=int(cfg["seed"]),
        head_relu=bool(mcfg["head_relu"]),
    )
    result = models_mod.train_mtl(model, train_ds, val_ds, _train_config(cfg, "mtl"))
    print(f"mtl: best val metric {result.best_metric:.4f} at epoch {result.best_epoch}")
    return _save_training_outputs(out, "mtl", model, result, spaces)


def _inputs_train_kgm(cfg: dict, out: str) -> dict[str, str]:
    inputs = {
        "dataset.train": _existing(_cfg_path(cfg, "dataset.train"), "dataset.train"),
        "dataset.val": _existing(_cfg_path(cfg, "dataset.val"), "dataset.val"),
        "features": _existing(_cfg_path(cfg, "features"), "features file"),
    }
    if float(cfg["kgm"]["lambda_encoder"]) != 0.0:
        inputs["embeddings"] = _artifact(out, "embeddings.bin", "train-node2vec")
    return inputs


def _run_train_kgm(cfg: dict, out: str) -> dict[str, str]:
    kcfg = cfg["kgm"]
    train = _load_split(cfg, "train")
    val = _load_split(cfg, "val")
    store = _load_features(cfg)
    spaces = _build_label_spaces(train, cfg)
    task = kcfg["task"]
    if task not in spaces:
        raise ConfigError(f"kgm.task {task!r} is not among labels.families")
    train_ds = models_mod.build_classification_dataset(train, store, spaces)
    val_ds = models_mod.build_classification_dataset(val, store, spaces)
    table = None
    if float(kcfg["lambda_encoder"]) != 0.0:
        table = node2vec.EmbeddingTable.load(os.path.join(out, "embeddings.bin"))
    model = models_mod.KGMModel(
        in_dim=store.dim,
        n_classes=len(spaces[task]),
        task=task,
        trunk_dim=int(kcfg["trunk_dim"]),
        context_dim=table.dim if table is not None else models_mod.DEFAULT_CONTEXT_DIM,
        lambda_classifier=float(kcfg["lambda_classifier"]),
        lambda_encoder=float(kcfg["lambda_encoder"]),
        seed=int(cfg["seed"]),
        head_relu=bool(kcfg["head_relu"]),
    )
    result = models_mod.train_kgm(model, train_ds, val_ds, table, _train_config(cfg, "kgm"))
    print(f"kgm[{task}]: best val accuracy {result.best_metric:.4f} at epoch {result.best_epoch}")
    return _save_training_outputs(out, "kgm", model, result, spaces)


def _train_config(cfg: dict, block: str) -> models_mod.TrainConfig:
    c = cfg[block]
    return models_mod.TrainConfig(
        batch_size=int(c["batch_size"]),
        learning_rate=float(c["learning_rate"]),
        momentum=float(c["momentum"]),
        patience=int(c["patience"]),
        max_epochs=int(c["max_epochs"]),
        seed=int(cfg["seed"]),
    )


def _save_training_outputs(out: str, kind: str, model, result, spaces) -> dict[str, str]:
    ckpt = os.path.join(out, f"{kind}.ckpt")
    binio.write_checkpoint(ckpt, model.state_tensors())
    meta = os.path.join(out, f"{kind}.meta.json")
    _write_json(meta, model.meta())
    history = os.path.join(out, f"{kind}.history.jsonl")
    _write_jsonl(history, result.history)
    labels = os.path.join(out, f"{kind}.labels.json")
    _save_label_spaces(labels, spaces)
    return {"checkpoint": ckpt, "meta": meta, "history": history, "labels": labels}


def _inputs_train_retrieval(cfg: dict, out: str) -> dict[str, str]:
    kind = cfg["retrieval"]["classifier"]
    if kind not in ("mtl", "kgm"):
        raise ConfigError(f"retrieval.classifier must be mtl or kgm, got {kind!r}")
    return {
        "dataset.train": _existing(_cfg_path(cfg, "dataset.train"), "dataset.train"),
        "features": _existing(_cfg_path(cfg, "features"), "features file"),
        "classifier.ckpt": _artifact(out, f"{kind}.ckpt", f"train-{kind}"),
        "classifier.meta": _artifact(out, f"{kind}.meta.json", f"train-{kind}"),
        "classifier.labels": _artifact(out, f"{kind}.labels.json", f"train-{kind}"),
    }


def _encode_corpus(cfg, split, store, model, spaces):
    rcfg = cfg["retrieval"]
    attribute = rcfg["attribute"]
    if attribute not in spaces:
        raise ConfigError(f"retrieval.attribute {attribute!r} has no label space")
    clf = models_mod.FrozenClassifier(
        model,
        task=attribute if model.kind == "mtl" else None,
        use_softmax=bool(rcfg["use_softmax_scores"]),
    )
    feats = store.matrix_for([rec.id for rec in split.records])
    return clf, feats


def _run_train_retrieval(cfg: dict, out: str) -> dict[str, str]:
    rcfg = cfg["retrieval"]
    kind = rcfg["classifier"]
    train = _load_split(cfg, "train")
    store = _load_features(cfg)
    spaces = _load_label_spaces(os.path.join(out, f"{kind}.labels.json"))
    model = _load_model(out, kind)
    clf, feats = _encode_corpus(cfg, train, store, model, spaces)

    vocab_com = retrieval.build_tfidf_vocab([r.comment for r in train.records], int(rcfg["vocab_min_count"]))
    vocab_tit = retrieval.build_tfidf_vocab([r.title for r in train.records], int(rcfg["vocab_min_count"]))
    space = spaces[rcfg["attribute"]]
    visual = retrieval.encode_visual(feats, clf)
    text = np.stack([retrieval.encode_text(r, vocab_com, vocab_tit, space) for r in train.records])

    rmodel = retrieval.RetrievalModel(
        visual_dim=visual.shape[1],
        text_dim=text.shape[1],
        common_dim=int(rcfg["common_dim"]),
        margin=float(rcfg["margin"]),
        seed=int(cfg["seed"]),
    )
    losses = retrieval.train_retrieval(
        rmodel,
        visual,
        text,
        retrieval.RetrievalConfig(
            batch_size=int(rcfg["batch_size"]),
            learning_rate=float(rcfg["learning_rate"]),
            epochs=int(rcfg["epochs"]),
            seed=int(cfg["seed"]),
        ),
    )
    print(f"retrieval: final epoch loss {losses[-1]:.6f}")
    ckpt = os.path.join(out, "retrieval.ckpt")
    binio.write_checkpoint(ckpt, rmodel.state_tensors())
    meta = os.path.join(out, "retrieval.meta.json")
    _write_json(meta, rmodel.meta())
    history = os.path.join(out, "retrieval.history.jsonl")
    _write_jsonl(history, [{"epoch": i + 1, "train_loss": loss} for i, loss in enumerate(losses)])
    vc = os.path.join(out, "vocab_comments.txt")
    vt = os.path.join(out, "vocab_titles.txt")
    vocab_com.save(vc)
    vocab_tit.save(vt)
    return {"checkpoint": ckpt, "meta": meta, "history": history, "vocab_comments": vc, "vocab_titles": vt}


def _inputs_evaluate(cfg: dict, out: str) -> dict[str, str]:
    inputs = {
        "dataset.test": _existing(_cfg_path(cfg, "dataset.test"), "dataset.test"),
        "features": _existing(_cfg_path(cfg, "features"), "features file"),
    }
    for target in cfg["evaluate"]["targets"]:
        if target in ("mtl", "kgm"):
            inputs[f"{target}.ckpt"] = _artifact(out, f"{target}.ckpt", f"train-{target}")
            inputs[f"{target}.labels"] = _artifact(out, f"{target}.labels.json", f"train-{target}")
        elif target == "retrieval":
            kind = cfg["retrieval"]["classifier"]
            inputs["retrieval.ckpt"] = _artifact(out, "retrieval.ckpt", "train-retrieval")
            inputs["vocab_comments"] = _artifact(out, "vocab_comments.txt", "train-retrieval")
            inputs["vocab_titles"] = _artifact(out, "vocab_titles.txt", "train-retrieval")
            inputs[f"{kind}.ckpt"] = _artifact(out, f"{kind}.ckpt", f"train-{kind}")
        else:
            raise ConfigError(f"unknown evaluate target {target!r}")
    return inputs


def _run_evaluate(cfg: dict, out: str) -> dict[str, str]:
    test = _load_split(cfg, "test")
    store = _load_features(cfg)
    metrics: dict[str, dict[str, float]] = {}
    for target in cfg["evaluate"]["targets"]:
        if target == "mtl":
            model = _load_model(out, "mtl")
            spaces = _load_label_spaces(os.path.join(out, "mtl.labels.json"))
            ds = models_mod.build_classification_dataset(test, store, spaces)
            accs = models_mod.mtl_task_accuracies(model, ds)
            metrics["mtl"] = {f"accuracy_{t}": acc for t, acc in accs.items()}
        elif target == "kgm":
            model = _load_model(out, "kgm")
            spaces = _load_label_spaces(os.path.join(out, "kgm.labels.json"))
            ds = models_mod.build_classification_dataset(test, store, spaces)
            metrics["kgm"] = {f"accuracy_{model.task}": models_mod.kgm_accuracy(model, ds)}
        elif target == "retrieval":
            metrics["retrieval"] = _evaluate_retrieval(cfg, out, test, store)
    txt = os.path.join(out, "metrics.txt")
    jsonl = os.path.join(out, "metrics.jsonl")
    evalsuite.write_metrics_report(txt, jsonl, metrics)
    with open(txt, encoding="utf-8") as fh:
        print(fh.read(), end="")
    return {"metrics.txt": txt, "metrics.jsonl": jsonl}


def _evaluate_retrieval(cfg: dict, out: str, test: DatasetSplit, store: FeatureStore) -> dict[str, float]:
    kind = cfg["retrieval"]["classifier"]
    clf_model = _load_model(out, kind)
    spaces = _load_label_spaces(os.path.join(out, f"{kind}.labels.json"))
    clf, feats = _encode_corpus(cfg, test, store, clf_model, spaces)
    vocab_com = retrieval.TfIdfVocab.load(os.path.join(out, "vocab_comments.txt"))
    vocab_tit = retrieval.TfIdfVocab.load(os.path.join(out, "vocab_titles.txt"))
    space = spaces[cfg["retrieval"]["attribute"]]

    with open(os.path.join(out, "retrieval.meta.json"), encoding="utf-8") as fh:
        rmeta = json.load(fh)
    rmodel = retrieval.RetrievalModel.from_meta(rmeta)
    rmodel.load_state(binio.read_checkpoint(os.path.join(out, "retrieval.ckpt")))

    visual = retrieval.encode_visual(feats, clf)
    text = np.stack([
        retrieval.encode_text(r, vocab_com, vocab_tit, space) for r in test.records
    ])
    result: dict[str, float] = {}
    for direction, queries, gallery in (
        ("text_to_image", text, visual),
        ("image_to_text", visual, text),
    ):
        ranked = retrieval.rank(rmodel, queries, gallery, direction)
        ranks = retrieval.relevant_ranks(ranked)
        for k in (1, 5, 10):
            result[f"{direction}_r_at_{k}"] = evalsuite.recall_at_k(ranks, k)
        result[f"{direction}_median_rank"] = evalsuite.median_rank(ranks)
    return result


def _inputs_cluster_quality(cfg: dict, out: str) -> dict[str, str]:
    source = cfg["cluster_quality"]["source"]
    which = cfg["cluster_quality"]["split"]
    inputs = {f"dataset.{which}": _existing(_cfg_path(cfg, f"dataset.{which}"), f"dataset.{which}")}
    if source in ("mtl", "kgm"):
        inputs["features"] = _existing(_cfg_path(cfg, "features"), "features file")
        inputs[f"{source}.ckpt"] = _artifact(out, f"{source}.ckpt", f"train-{source}")
    elif source == "node2vec":
        inputs["embeddings"] = _artifact(out, "embeddings.bin", "train-node2vec")
    elif source == "features":
        inputs["features"] = _existing(_cfg_path(cfg, "features"), "features file")
    else:
        raise ConfigError(f"unknown cluster_quality.source {source!r}")
    return inputs


def _collect_embeddings(cfg: dict, out: str, source: str, split: DatasetSplit):
    """Embedding matrix + record list for the chosen source."""
    if source in ("mtl", "kgm"):
        store = _load_features(cfg)
        model = _load_model(out, source)
        ids = [r.id for r in split.records if r.id in store]
        records = [r for r in split.records if r.id in store]
        emb = models_mod.extract_embedding(model, store.matrix_for(ids))
        return records, emb
    if source == "node2vec":
        table = node2vec.EmbeddingTable.load(os.path.join(out, "embeddings.bin"))
        records = [r for r in split.records if f"painting/{r.id}" in table]
        emb = table.matrix_for([f"painting/{r.id}" for r in records])
        return records, emb
    store = _load_features(cfg)
    records = [r for r in split.records if r.id in store]
    return records, store.matrix_for([r.id for r in records])


def _run_cluster_quality(cfg: dict, out: str) -> dict[str, str]:
    ccfg = cfg["cluster_quality"]
    split = _load_split(cfg, ccfg["split"])
    records, emb = _collect_embeddings(cfg, out, ccfg["source"], split)
    metrics: dict[str, dict[str, float]] = {"cluster_quality": {}}
    for family in ccfg["families"]:
        values = [" ".join(getattr(r, family).split()).casefold() for r in records]
        keep = [i for i, v in enumerate(values) if v]
        groups = {values[i] for i in keep}
        if len(groups) < 2 or len(keep) < 2:
            print(f"cluster-quality[{family}]: skipped (fewer than 2 clusters)")
            continue
        q = evalsuite.davies_bouldin(emb[keep], [values[i] for i in keep], p=2.0)
        metrics["cluster_quality"][family] = q
        print(f"cluster-quality[{family}]: Q = {q:.6f}")
    txt = os.path.join(out, "cluster_quality.txt")
    jsonl = os.path.join(out, "cluster_quality.jsonl")
    evalsuite.write_metrics_report(txt, jsonl, metrics)
    return {"cluster_quality.txt": txt, "cluster_quality.jsonl": jsonl}


def _inputs_export(cfg: dict, out: str) -> dict[str, str]:
    probe = dict(cfg)
    probe["cluster_quality"] = {"source": cfg["export"]["source"], "split": cfg["export"]["split"]}
    return _inputs_cluster_quality(probe, out)


def _run_export(cfg: dict, out: str) -> dict[str, str]:
    ecfg = cfg["export"]
    split = _load_split(cfg, ecfg["split"])
    records, emb = _collect_embeddings(cfg, out, ecfg["source"], split)
    path = os.path.join(out, "embeddings_export.tsv")
    evalsuite.export_embeddings(
        path,
        [r.id for r in records],
        [getattr(r, ecfg["family"]) for r in records],
        emb,
    )
    print(f"exported {len(records)} embeddings to {path}")
    return {"export": path}


@dataclass
class StageDef:
    name: str
    config_keys: tuple[str, ...]
    inputs: Callable[[dict, str], dict[str, str]]
    run: Callable[[dict, str], dict[str, str]]


STAGES: dict[str, StageDef] = {
    "build-graph": StageDef("build-graph", ("graph", "labels"), _inputs_build_graph, _run_build_graph),
    "train-node2vec": StageDef("train-node2vec", ("node2vec",), _inputs_train_node2vec, _run_train_node2vec),
    "train-mtl": StageDef("train-mtl", ("mtl", "labels"), _inputs_train_mtl, _run_train_mtl),
    "train-kgm": StageDef("train-kgm", ("kgm", "labels"), _inputs_train_kgm, _run_train_kgm),
    "train-retrieval": StageDef("train-retrieval", ("retrieval",), _inputs_train_retrieval, _run_train_retrieval),
    "evaluate": StageDef("evaluate", ("evaluate", "retrieval"), _inputs_evaluate, _run_evaluate),
    "cluster-quality": StageDef("cluster-quality", ("cluster_quality",), _inputs_cluster_quality, _run_cluster_quality),
    "export-embeddings": StageDef("export-embeddings", ("export",), _inputs_export, _run_export),
}


def _config_hash(cfg: dict, keys: tuple[str, ...]) -> str:
    block = {k: cfg.get(k) for k in keys}
    block["seed"] = cfg.get("seed")
    return hashlib.sha256(json.dumps(block, sort_keys=True).encode("utf-8")).hexdigest()


def run_stage(stage: str, cfg: dict, force: bool = False) -> dict[str, str]:
    """Run one pipeline stage; skips when hashes show nothing changed."""
    sdef = STAGES[stage]
    out = str(cfg["output_dir"])
    os.makedirs(out, exist_ok=True)
    os.makedirs(os.path.join(out, "manifests"), exist_ok=True)
    inputs = sdef.inputs(cfg, out)
    cfg_hash = _config_hash(cfg, sdef.config_keys)
    input_hashes = {name: _sha256(path) for name, path in sorted(inputs.items())}
    manifest_path = os.path.join(out, "manifests", f"{stage}.json")

    if not force and os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            old = json.load(fh)
        unchanged = old.get("config_hash") == cfg_hash and old.get("inputs") == input_hashes
        if unchanged:
            out_paths = {name: os.path.join(out, fname) for name, fname in old.get("output_files", {}).items()}
            if all(os.path.exists(p) for p in out_paths.values()) and all(
                _sha256(p) == old["outputs"][name] for name, p in out_paths.items()
            ):
                print(f"{stage}: up to date, skipping (use --force to rerun)")
                return out_paths

    outputs = sdef.run(cfg, out)
    manifest = {
        "stage": stage,
        "config_hash": cfg_hash,
        "inputs": input_hashes,
        "outputs": {name: _sha256(path) for name, path in sorted(outputs.items())},
        "output_files": {name: os.path.relpath(path, out) for name, path in sorted(outputs.items())},
    }
    _write_json(manifest_path, manifest)
    return outputs


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="artcontext",
        description="Context-aware art embedding pipeline.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        sp = sub.add_parser(name, help=f"run the {name} stage")
        sp.add_argument("--config", required=True, help="YAML config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--force", action="store_true", help="rerun even when hashes are unchanged")
        sp.add_argument(
            "--stage-override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config entry, e.g. node2vec.epochs=3",
        )
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.stage_override, seed=args.seed)
        run_stage(args.stage, cfg, force=args.force)
    except (ConfigError,) as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error[missing-artifact]: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"error[format]: {exc}", file=sys.stderr)
        return 4
    except (SchemaError, DatasetError) as exc:
        print(f"error[dataset]: {exc}", file=sys.stderr)
        return 5
    except ArtContextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

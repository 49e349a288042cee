"""Acceptance suite: one test per exit criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The SemArt checks only run when ARTCTX_SEMART_DIR points at the
dataset; everything else is self-contained and synthetic.
"""

import functools
import math
import os
import time

import numpy as np
import pytest
import yaml

from artcontext import autodiff as ad
from artcontext import cli, evalsuite as ev, kgraph, models as m, node2vec as n2v, retrieval as rt
from artcontext.ingest import PaintingRecord

from _fixtures import barbell_graph, path_graph, separable_tasks_dataset, write_pipeline_fixture
from test_evalsuite import _brute_force_davies_bouldin


def criterion(name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"\n[ACCEPTANCE] {name}: FAIL")
                raise
            print(f"\n[ACCEPTANCE] {name}: PASS")
            return result

        return wrapper

    return decorate


# ---------------------------------------------------------------------------


@criterion("gradient correctness (<1e-4 rel, >=20 instances per loss/layer, <10s)")
def test_gradient_correctness():
    started = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0

    for _ in range(20):  # dense layer
        layer = ad.DenseLayer(5, 8, seed=int(rng.integers(1 << 31)))
        x = rng.normal(size=5)
        w = rng.normal(size=8)

        def dense_loss():
            layer.zero_grad()
            out = layer.forward(x)
            layer.backward(x, w)
            return float(w @ out), [g.copy() for g in layer.gradients()]

        worst = max(worst, ad.grad_check(dense_loss, layer.parameters()))

    for _ in range(20):  # cross-entropy wrt logits
        logits = rng.normal(scale=2.0, size=6)
        label = int(rng.integers(6))

        def ce_loss():
            loss, grad = ad.cross_entropy(logits, label)
            return loss, [grad]

        worst = max(worst, ad.grad_check(ce_loss, [logits]))

    for _ in range(20):  # smooth L1 wrt predictions
        pred = rng.normal(scale=2.0, size=7)
        target = rng.normal(scale=2.0, size=7)

        def sl1_loss():
            loss, grad = ad.smooth_l1(pred, target)
            return loss, [grad]

        worst = max(worst, ad.grad_check(sl1_loss, [pred]))

    for i in range(20):  # cosine margin, both branches, margin forced active
        a = rng.normal(size=5)
        b = rng.normal(size=5)
        matching = i % 2 == 0

        def cm_loss():
            loss, ga, gb = ad.cosine_margin_loss(a, b, matching=matching, margin=-2.0)
            return loss, [ga, gb]

        worst = max(worst, ad.grad_check(cm_loss, [a, b]))

    for _ in range(20):  # combined classifier + encoder objective
        model = m.KGMModel(
            in_dim=3, n_classes=3, task="type", trunk_dim=4, context_dim=3,
            lambda_classifier=0.9, lambda_encoder=0.1,
            seed=int(rng.integers(1 << 31)), head_relu=False,
        )
        x = rng.normal(size=(4, 3))
        y = rng.integers(0, 3, size=4)
        ctx = rng.normal(size=(4, 3))

        def kgm_loss(model=model, x=x, y=y, ctx=ctx):
            model.zero_grad()
            loss, _ = m._kgm_batch(model, x, y, ctx)
            return loss, [g.copy() for g in model.gradients()]

        worst = max(worst, ad.grad_check(kgm_loss, model.parameters()))

    for _ in range(20):  # cosine-margin retrieval batch objective
        model = rt.RetrievalModel(4, 5, common_dim=3, margin=-2.0, seed=int(rng.integers(1 << 31)))
        visual = rng.normal(size=(3, 4))
        text = rng.normal(size=(3, 5))

        def retr_loss(model=model, visual=visual, text=text):
            model.zero_grad()
            loss = rt.retrieval_batch_step(model, visual, text)
            return loss, [g.copy() for g in model.gradients()]

        worst = max(worst, ad.grad_check(retr_loss, model.parameters()))

    elapsed = time.time() - started
    assert worst < 1e-4, worst
    assert elapsed < 10.0, f"gradient checks took {elapsed:.1f}s"


@criterion("closed-form loss values (ln C, smooth-L1 branch point, cosine-margin triple)")
def test_closed_form_loss_values():
    for c in range(2, 16):
        loss, _ = ad.cross_entropy(np.zeros(c), 0)
        assert abs(loss - math.log(c)) < 1e-12

    quadratic_at_one = 0.5 * 1.0**2
    linear_at_one = 1.0 - 0.5
    assert quadratic_at_one == 0.5 and linear_at_one == 0.5
    loss, _ = ad.smooth_l1(np.array([1.0]), np.array([0.0]))
    assert loss == 0.5

    a = np.array([0.6, 0.8])
    matching_loss, _, _ = ad.cosine_margin_loss(a, a.copy(), matching=True)
    orthogonal_loss, _, _ = ad.cosine_margin_loss(
        np.array([1.0, 0.0]), np.array([0.0, 1.0]), matching=False, margin=0.1
    )
    same_loss, _, _ = ad.cosine_margin_loss(a, a.copy(), matching=False, margin=0.1)
    assert matching_loss == pytest.approx(0.0, abs=1e-12)
    assert orthogonal_loss == 0.0
    assert same_loss == pytest.approx(0.9, abs=1e-12)


@criterion("node2vec bias oracle (0.2/0.8 within 0.02 over 1e5 transitions; homophily 95/100)")
def test_node2vec_bias_and_homophily():
    g = path_graph(3)
    probs = n2v.next_step_distribution(g, prev=0, cur=1, p=2.0, q=0.5)
    assert probs == pytest.approx([0.2, 0.8], abs=1e-12)

    cfg = n2v.WalkConfig(return_param=2.0, inout_param=0.5, walk_length=2000, walks_per_node=35, seed=3)
    walks = n2v.generate_walks(g, cfg)
    back = total = 0
    for walk in walks:
        for i in range(2, len(walk)):
            if walk[i - 1] == 1 and walk[i - 2] in (0, 2):
                total += 1
                back += walk[i] == walk[i - 2]
    assert total >= 100_000
    assert abs(back / total - 0.2) <= 0.02
    assert abs((total - back) / total - 0.8) <= 0.02

    barbell = barbell_graph(5)
    sg_cfg = n2v.SkipGramConfig(dim=12, window=3, negatives_per_positive=3, epochs=2, learning_rate=0.08)
    wins = 0
    for seed in range(100):
        walk_cfg = n2v.WalkConfig(walk_length=15, walks_per_node=4, seed=seed)
        table = n2v.train_embeddings(n2v.generate_walks(barbell, walk_cfg), sg_cfg, seed, graph=barbell)
        vecs = np.stack([table[barbell.node_key(i)] for i in range(10)])
        unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        sims = unit @ unit.T
        intra = [sims[i, j] for i in range(10) for j in range(i + 1, 10) if (i < 5) == (j < 5)]
        inter = [sims[i, j] for i in range(10) for j in range(i + 1, 10) if (i < 5) != (j < 5)]
        wins += float(np.mean(intra)) > float(np.mean(inter))
    assert wins >= 95, f"homophily held in only {wins}/100 runs"


def _kg_fixture_records():
    def rec(pid, author="", school="", type_=""):
        return PaintingRecord(
            id=pid, image_ref=pid, author=author, title="", date="",
            technique="", type=type_, school=school, timeframe="", comment="",
        )

    return [
        rec("p1", author="X", school="S", type_="portrait"),
        rec("p2", author="X", school="S", type_="landscape"),
    ]


@criterion("knowledge-graph construction oracle (hand fixtures exact; structure check)")
def test_kg_construction_oracle():
    records = _kg_fixture_records()
    g = kgraph.build_graph(records)

    # Independent enumeration of the expected node and edge sets.
    expected_nodes = {
        ("painting", "p1"), ("painting", "p2"),
        ("author", "x"), ("school", "s"),
        ("type", "portrait"), ("type", "landscape"),
    }
    expected_edges = {
        frozenset({("painting", "p1"), ("type", "portrait")}),
        frozenset({("painting", "p2"), ("type", "landscape")}),
        frozenset({("painting", "p1"), ("author", "x")}),
        frozenset({("painting", "p2"), ("author", "x")}),
        frozenset({("author", "x"), ("school", "s")}),
    }
    got_nodes = {(ref.family, ref.key) for _, ref in g.nodes()}
    got_edges = {
        frozenset({(g.node(a).family, g.node(a).key), (g.node(b).family, g.node(b).key)})
        for a, b in g.edges()
    }
    assert got_nodes == expected_nodes
    assert got_edges == expected_edges

    stats = kgraph.graph_stats(g)
    assert stats.nodes == 6 and stats.edges == 5
    assert stats.families == {"painting": 2, "author": 1, "school": 1, "type": 2}

    # Isolated-painting fixture.
    lonely = kgraph.build_graph([_kg_fixture_records()[0].__class__(
        id="p3", image_ref="p3", author="", title="", date="", technique="",
        type="", school="", timeframe="", comment="",
    )])
    assert lonely.num_nodes == 1 and lonely.num_edges == 0

    # Structure: painting-attribute plus author-school only.
    from _fixtures import make_records
    from artcontext.ingest import derive_attributes, extract_title_keywords

    big = make_records(40, seed=21)
    keywords = extract_title_keywords([r.title for r in big], 3, 2)
    full = kgraph.build_graph(big, derive_attributes(big, keywords, 3))
    assert kgraph.structure_violations(full) == []


@criterion("model equivalences (lambda_e=0 bitwise trajectory; frozen context table)")
def test_model_equivalences():
    rng = np.random.default_rng(8)
    n, dim = 30, 5
    features = rng.normal(size=(n, dim))
    labels = rng.integers(0, 3, size=n)
    train = m.ClassificationDataset(
        ids=[f"p{i}" for i in range(n)], features=features, labels={"type": labels}
    )
    val = m.ClassificationDataset(
        ids=[f"v{i}" for i in range(10)], features=features[:10], labels={"type": labels[:10]}
    )
    for epochs in (1, 2, 3, 5):
        cfg = m.TrainConfig(batch_size=7, learning_rate=0.01, patience=10**6, max_epochs=epochs, seed=9)
        kgm = m.KGMModel(
            in_dim=dim, n_classes=3, task="type", trunk_dim=6, context_dim=4,
            lambda_classifier=1.0, lambda_encoder=0.0, seed=11,
        )
        m.train_kgm(kgm, train, val, None, cfg)
        standalone = m.MTLModel(in_dim=dim, class_counts={"type": 3}, trunk_dim=6, seed=11)
        m.train_mtl(standalone, train, val, cfg)
        kgm_state = kgm.state_tensors()
        for name, tensor in standalone.state_tensors().items():
            assert kgm_state[name].tobytes() == tensor.tobytes(), (epochs, name)

    # Context vectors are never written during training.
    ids = [f"p{i}" for i in range(n)]
    table = n2v.EmbeddingTable(dim=4, vectors={f"painting/{pid}": rng.normal(size=4) for pid in ids})
    before = {key: vec.tobytes() for key, vec in table.vectors.items()}
    model = m.KGMModel(in_dim=dim, n_classes=3, task="type", trunk_dim=6, context_dim=4, seed=2)
    m.train_kgm(
        model,
        m.ClassificationDataset(ids=ids, features=features, labels={"type": labels}),
        val,
        table,
        m.TrainConfig(batch_size=6, max_epochs=4, patience=10, seed=1),
    )
    assert {key: vec.tobytes() for key, vec in table.vectors.items()} == before


@criterion("overfit fixtures (MTL >0.95 on 4 tasks in <=200 epochs/<60s; retrieval R@1=1.0)")
def test_overfit_fixtures():
    started = time.time()
    counts = {"type": 3, "school": 4, "timeframe": 3, "author": 5}
    features, labels = separable_tasks_dataset(140, 12, counts, seed=0)
    ds = m.ClassificationDataset(ids=[f"p{i}" for i in range(140)], features=features, labels=labels)
    model = m.MTLModel(in_dim=12, class_counts=counts, trunk_dim=32, seed=0)
    cfg = m.TrainConfig(batch_size=28, learning_rate=0.05, patience=10**6, max_epochs=200, seed=0)
    result = m.train_mtl(model, ds, ds, cfg)
    assert len(result.history) <= 200
    accs = m.mtl_task_accuracies(model, ds)
    assert all(acc > 0.95 for acc in accs.values()), accs
    assert time.time() - started < 60.0

    rng = np.random.default_rng(0)
    visual = rng.normal(size=(8, 12))
    text = np.eye(8) + 0.01 * rng.normal(size=(8, 8))
    rmodel = rt.RetrievalModel(visual_dim=12, text_dim=8, common_dim=16, seed=1)
    rt.train_retrieval(rmodel, visual, text, rt.RetrievalConfig(batch_size=8, learning_rate=0.01, epochs=200, seed=0))
    ranks = rt.relevant_ranks(rt.rank(rmodel, text, visual, "text_to_image"))
    assert ev.recall_at_k(ranks, 1) == 1.0


@criterion("Davies-Bouldin (hand value 0.5; invariances to 1e-9; brute force to 1e-10 x50)")
def test_davies_bouldin_criterion():
    points = np.array([[0.0], [2.0], [4.0], [6.0]])
    labels = ["a", "a", "b", "b"]
    assert ev.davies_bouldin(points, labels) == pytest.approx(0.5, abs=1e-12)

    rng = np.random.default_rng(10)
    x = rng.normal(size=(40, 4))
    y = rng.integers(0, 4, size=40)
    base = ev.davies_bouldin(x, y)
    assert abs(ev.davies_bouldin(x + np.array([5.0, -3.0, 11.0, 0.5]), y) - base) < 1e-9
    for alpha in (1e-3, 0.25, 7.0, 1e3):
        assert abs(ev.davies_bouldin(alpha * x, y) - base) < 1e-9

    for trial in range(50):
        n = int(rng.integers(4, 24))
        d = int(rng.integers(1, 6))
        k = int(rng.integers(2, 5))
        pts = rng.normal(scale=2.5, size=(n, d))
        lbl = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
        got = ev.davies_bouldin(pts, lbl)
        want = _brute_force_davies_bouldin(pts.tolist(), lbl.tolist())
        assert got == pytest.approx(want, abs=1e-10), trial


@criterion("retrieval metrics (hand R@K/MR exact; R@K monotone in K)")
def test_metric_hand_values_and_monotonicity():
    ranks = [1, 3, 7, 20]
    assert ev.recall_at_k(ranks, 5) == 0.5
    assert ev.median_rank(ranks) == 5.0
    assert ev.recall_at_k([1, 1, 1], 1) == 1.0
    assert ev.median_rank([1, 1, 1]) == 1.0

    rng = np.random.default_rng(11)
    for _ in range(25):
        multiset = rng.integers(1, 40, size=int(rng.integers(1, 30)))
        values = [ev.recall_at_k(multiset, k) for k in range(1, 41)]
        assert all(b >= a for a, b in zip(values, values[1:]))


@criterion("pipeline determinism (two runs, byte-identical manifests)")
def test_pipeline_determinism(tmp_path):
    root = str(tmp_path)
    paths = write_pipeline_fixture(os.path.join(root, "data"))
    stages = [
        "build-graph", "train-node2vec", "train-mtl", "train-kgm",
        "train-retrieval", "evaluate", "cluster-quality", "export-embeddings",
    ]
    manifests = {}
    for run in ("one", "two"):
        out_dir = os.path.join(root, run)
        cfg = {
            "seed": 7,
            "output_dir": out_dir,
            "dataset": {"train": paths["train"], "val": paths["val"], "test": paths["test"], "delimiter": "\t"},
            "features": paths["features"],
            "labels": {"min_count": 1, "families": ["type", "school", "timeframe", "author"]},
            "graph": {"keyword_ngram_max": 3, "keyword_min_freq": 2},
            "node2vec": {"p": 1.0, "q": 1.0, "walk_length": 10, "walks_per_node": 2, "dim": 6,
                          "window": 3, "negatives": 2, "epochs": 2, "learning_rate": 0.05},
            "mtl": {"trunk_dim": 12, "lambdas": None, "batch_size": 10, "learning_rate": 0.01,
                     "momentum": 0.9, "patience": 1, "max_epochs": 3, "head_relu": True},
            "kgm": {"task": "author", "trunk_dim": 12, "lambda_classifier": 0.9, "lambda_encoder": 0.1,
                     "batch_size": 10, "learning_rate": 0.01, "momentum": 0.9, "patience": 1,
                     "max_epochs": 3, "head_relu": True},
            "retrieval": {"classifier": "kgm", "attribute": "author", "vocab_min_count": 1,
                           "common_dim": 8, "margin": 0.1, "batch_size": 8, "learning_rate": 0.001,
                           "epochs": 3, "use_softmax_scores": False},
            "evaluate": {"targets": ["mtl", "kgm", "retrieval"]},
            "cluster_quality": {"source": "kgm", "families": ["type", "school"], "split": "train"},
            "export": {"source": "kgm", "family": "timeframe", "split": "test"},
        }
        config_path = os.path.join(root, f"config_{run}.yaml")
        with open(config_path, "w") as fh:
            yaml.safe_dump(cfg, fh)
        for stage in stages:
            assert cli.main([stage, "--config", config_path]) == 0, stage
        manifest_dir = os.path.join(out_dir, "manifests")
        manifests[run] = {
            name: open(os.path.join(manifest_dir, name), "rb").read()
            for name in sorted(os.listdir(manifest_dir))
        }
    assert set(manifests["one"]) == set(manifests["two"]) == {f"{s}.json" for s in stages}
    assert manifests["one"] == manifests["two"]


# -- conditional on the SemArt dataset ---------------------------------------

SEMART_DIR = os.environ.get("ARTCTX_SEMART_DIR")

semart = pytest.mark.skipif(
    not SEMART_DIR or not os.path.isdir(SEMART_DIR),
    reason="set ARTCTX_SEMART_DIR to the SemArt dataset directory to enable",
)


def _semart_split(name):
    from artcontext.ingest import load_dataset

    candidates = [f"semart_{name}.csv", f"semart_{name}.tsv", f"{name}.csv"]
    for candidate in candidates:
        path = os.path.join(SEMART_DIR, candidate)
        if os.path.exists(path):
            return load_dataset(path, name)
    raise FileNotFoundError(f"no {name} split under {SEMART_DIR}")


@semart
@criterion("SemArt scale checks (graph counts, label spaces, vocab sizes)")
def test_semart_scale_checks():
    from artcontext.ingest import build_label_space, derive_attributes, extract_title_keywords

    train = _semart_split("train")
    assert len(train) == 19_244

    authors = build_label_space(train.records, "author", 10)
    assert len(authors) == 350
    schools = build_label_space(train.records, "school", 10)
    assert len(schools) == 25

    titles = [rec.title for rec in train.records]
    target_keywords = 1_163
    calibrated = None
    for threshold in range(2, 400):
        count = len(extract_title_keywords(titles, 3, threshold))
        if count == target_keywords:
            calibrated = threshold
            break
        if count < target_keywords:
            calibrated = threshold
            break
    assert calibrated is not None
    keywords = extract_title_keywords(titles, 3, calibrated)

    graph = kgraph.build_graph(train.records, derive_attributes(train.records, keywords, 3))
    stats = kgraph.graph_stats(graph)
    assert stats.families["author"] == 3_166
    assert stats.families["material"] == 618
    assert stats.families["school"] == 26
    assert stats.families["support"] == 8_899
    assert stats.families["timeframe"] == 22
    assert stats.families["type"] == 10
    assert stats.families["keyword"] == len(keywords)
    assert stats.nodes == 33_148
    assert stats.edges == 125_506

    vocab_com = rt.build_tfidf_vocab([rec.comment for rec in train.records], 10)
    assert len(vocab_com) == 9_708
    vocab_tit = rt.build_tfidf_vocab(titles, 10)
    assert len(vocab_tit) == 9_092

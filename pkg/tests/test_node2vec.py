"""Biased walk distributions, walk generation, and skip-gram training."""

import numpy as np
import pytest

from artcontext import node2vec as n2v
from artcontext.errors import MagicError

from _fixtures import barbell_graph, graph_from_edges, path_graph


class TestNextStepDistribution:
    def test_triangle_uniform(self):
        g = graph_from_edges([(0, 1), (1, 2), (0, 2)])
        probs = n2v.next_step_distribution(g, prev=0, cur=1, p=1.0, q=1.0)
        assert np.allclose(probs, [0.5, 0.5], atol=1e-15)

    def test_path_graph_bias(self):
        g = path_graph(3)
        probs = n2v.next_step_distribution(g, prev=0, cur=1, p=2.0, q=0.5)
        # neighbors(1) sorted = [0, 2]: back to 0 with 1/p, on to 2 with 1/q
        assert probs == pytest.approx([0.2, 0.8], abs=1e-15)

    def test_star_uniform(self):
        g = graph_from_edges([(0, i) for i in range(1, 6)])
        probs = n2v.next_step_distribution(g, prev=1, cur=0, p=1.0, q=1.0)
        assert np.allclose(probs, np.full(5, 0.2), atol=1e-15)

    def test_sums_to_one_on_all_pairs(self):
        g = barbell_graph(5)
        rng = np.random.default_rng(0)
        for _ in range(50):
            p, q = rng.uniform(0.1, 4.0, size=2)
            for a, b in g.edges():
                for prev, cur in ((a, b), (b, a)):
                    probs = n2v.next_step_distribution(g, prev, cur, p, q)
                    assert abs(probs.sum() - 1.0) < 1e-12

    def test_p_q_one_equals_first_order_uniform(self):
        g = barbell_graph(4)
        for a, b in g.edges():
            probs = n2v.next_step_distribution(g, a, b, 1.0, 1.0)
            expected = np.full(g.degree(b), 1.0 / g.degree(b))
            assert np.array_equal(probs, expected)

    def test_prev_must_be_adjacent(self):
        g = path_graph(4)
        with pytest.raises(ValueError):
            n2v.next_step_distribution(g, prev=0, cur=3, p=1.0, q=1.0)

    def test_no_neighbors_error(self):
        g = graph_from_edges([(0, 1)], n_nodes=3)
        with pytest.raises(ValueError):
            n2v.next_step_distribution(g, prev=0, cur=2, p=1.0, q=1.0)


class TestGenerateWalks:
    def test_isolated_node_walk_of_one(self):
        g = graph_from_edges([(0, 1)], n_nodes=3)
        walks = n2v.generate_walks(g, n2v.WalkConfig(walk_length=10, walks_per_node=2, seed=0))
        isolated = [w for w in walks if w[0] == 2]
        assert len(isolated) == 2
        assert all(w == [2] for w in isolated)

    def test_walk_counts_and_length(self):
        g = barbell_graph(3)
        cfg = n2v.WalkConfig(walk_length=12, walks_per_node=3, seed=1)
        walks = n2v.generate_walks(g, cfg)
        assert len(walks) == 3 * g.num_nodes
        assert all(len(w) == 12 for w in walks)  # no dead ends in a barbell
        starts = [w[0] for w in walks]
        assert sorted(set(starts)) == list(range(g.num_nodes))

    def test_deterministic_for_fixed_seed(self):
        g = barbell_graph(4)
        cfg = n2v.WalkConfig(walk_length=15, walks_per_node=4, seed=42)
        assert n2v.generate_walks(g, cfg) == n2v.generate_walks(g, cfg)

    def test_different_seeds_differ(self):
        g = barbell_graph(4)
        w1 = n2v.generate_walks(g, n2v.WalkConfig(walk_length=15, walks_per_node=2, seed=1))
        w2 = n2v.generate_walks(g, n2v.WalkConfig(walk_length=15, walks_per_node=2, seed=2))
        assert w1 != w2

    def test_never_visits_non_neighbor(self):
        g = barbell_graph(5)
        walks = n2v.generate_walks(g, n2v.WalkConfig(walk_length=30, walks_per_node=3, seed=7))
        for walk in walks:
            for a, b in zip(walk, walk[1:]):
                assert g.has_edge(a, b)

    def test_empty_graph_rejected(self):
        from artcontext.kgraph import KnowledgeGraph

        with pytest.raises(ValueError):
            n2v.generate_walks(KnowledgeGraph(), n2v.WalkConfig())

    def test_empirical_transitions_match_distribution(self):
        g = path_graph(3)
        cfg = n2v.WalkConfig(return_param=2.0, inout_param=0.5, walk_length=2000, walks_per_node=35, seed=3)
        walks = n2v.generate_walks(g, cfg)
        back = total = 0
        for walk in walks:
            for i in range(2, len(walk)):
                if walk[i - 1] == 1 and walk[i - 2] in (0, 2):
                    total += 1
                    back += walk[i] == walk[i - 2]
        assert total >= 100_000
        assert back / total == pytest.approx(0.2, abs=0.02)


class TestSkipGramTrainer:
    def test_zero_epochs_equals_initialization(self):
        g = barbell_graph(3)
        walks = n2v.generate_walks(g, n2v.WalkConfig(walk_length=8, walks_per_node=2, seed=0))
        cfg = n2v.SkipGramConfig(dim=6, window=2, negatives_per_positive=2, epochs=0, learning_rate=0.05)
        table = n2v.train_embeddings(walks, cfg, seed=5, graph=g)
        reference = n2v.SkipGramTrainer(walks, cfg, seed=5, n_nodes=g.num_nodes)
        for idx in range(g.num_nodes):
            assert np.array_equal(table[g.node_key(idx)], reference.w_in[idx])

    def test_initialization_ranges(self):
        cfg = n2v.SkipGramConfig(dim=10, epochs=0)
        trainer = n2v.SkipGramTrainer([[0, 1]], cfg, seed=0)
        assert np.all(np.abs(trainer.w_in) <= 0.5 / cfg.dim)
        assert np.array_equal(trainer.w_ctx, np.zeros_like(trainer.w_ctx))

    def test_repeated_pair_walk_cosine_rises_monotonically(self):
        walk = [0, 1] * 40
        cfg = n2v.SkipGramConfig(dim=8, window=1, negatives_per_positive=2, epochs=8, learning_rate=0.05)
        trainer = n2v.SkipGramTrainer([walk], cfg, seed=7)
        trajectory = []
        for _ in range(cfg.epochs):
            trainer.run_epoch()
            a_in, b_ctx = trainer.w_in[0], trainer.w_ctx[1]
            trajectory.append(float(a_in @ b_ctx / (np.linalg.norm(a_in) * np.linalg.norm(b_ctx))))
        assert all(b >= a - 1e-12 for a, b in zip(trajectory, trajectory[1:]))
        assert trajectory[-1] > 0.9

    def test_barbell_homophily_single_run(self):
        g = barbell_graph(5)
        walks = n2v.generate_walks(g, n2v.WalkConfig(walk_length=20, walks_per_node=6, seed=0))
        cfg = n2v.SkipGramConfig(dim=16, window=4, negatives_per_positive=3, epochs=3, learning_rate=0.05)
        table = n2v.train_embeddings(walks, cfg, seed=0, graph=g)
        vecs = np.stack([table[g.node_key(i)] for i in range(10)])
        unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        sims = unit @ unit.T
        intra = [sims[i, j] for i in range(10) for j in range(i + 1, 10) if (i < 5) == (j < 5)]
        inter = [sims[i, j] for i in range(10) for j in range(i + 1, 10) if (i < 5) != (j < 5)]
        assert np.mean(intra) > np.mean(inter)

    def test_epoch_objective_decreases_within_noise_band(self):
        g = barbell_graph(5)
        walks = n2v.generate_walks(g, n2v.WalkConfig(walk_length=20, walks_per_node=6, seed=0))
        cfg = n2v.SkipGramConfig(dim=16, window=4, negatives_per_positive=3, epochs=5, learning_rate=0.05)
        trainer = n2v.SkipGramTrainer(walks, cfg, seed=0)
        for _ in range(cfg.epochs):
            trainer.run_epoch()
        for before, after in zip(trainer.epoch_losses, trainer.epoch_losses[1:]):
            assert after <= before * 1.05

    def test_deterministic_training(self):
        g = barbell_graph(3)
        walks = n2v.generate_walks(g, n2v.WalkConfig(walk_length=10, walks_per_node=2, seed=0))
        cfg = n2v.SkipGramConfig(dim=6, window=2, negatives_per_positive=2, epochs=2, learning_rate=0.05)
        t1 = n2v.train_embeddings(walks, cfg, seed=3, graph=g)
        t2 = n2v.train_embeddings(walks, cfg, seed=3, graph=g)
        for idx in range(g.num_nodes):
            assert np.array_equal(t1[g.node_key(idx)], t2[g.node_key(idx)])

    def test_empty_walks_rejected(self):
        with pytest.raises(ValueError):
            n2v.SkipGramTrainer([], n2v.SkipGramConfig(), seed=0)

    def test_every_graph_node_present(self):
        g = graph_from_edges([(0, 1)], n_nodes=4)  # nodes 2, 3 isolated
        walks = n2v.generate_walks(g, n2v.WalkConfig(walk_length=5, walks_per_node=1, seed=0))
        table = n2v.train_embeddings(walks, n2v.SkipGramConfig(dim=4, epochs=1), seed=0, graph=g)
        assert len(table) == 4
        for idx in range(4):
            assert g.node_key(idx) in table


class TestEmbeddingTable:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        table = n2v.EmbeddingTable(
            dim=5,
            vectors={f"painting/p{i}": rng.normal(size=5) for i in range(4)},
        )
        path = str(tmp_path / "emb.bin")
        table.save(path)
        back = n2v.EmbeddingTable.load(path)
        assert back.dim == 5
        assert set(back.vectors) == set(table.vectors)
        for key, vec in table.vectors.items():
            assert np.allclose(back[key], vec, atol=1e-6)  # float32 container

    def test_wrong_magic_rejected(self, tmp_path):
        from artcontext.ingest import FeatureStore, write_features

        path = str(tmp_path / "feat.bin")
        write_features(FeatureStore(dim=2, entries={"a": np.zeros(2, dtype=np.float32)}), path)
        with pytest.raises(MagicError):
            n2v.EmbeddingTable.load(path)

    def test_text_export(self, tmp_path):
        table = n2v.EmbeddingTable(dim=2, vectors={"author/jan van eyck": np.array([1.5, -2.25])})
        path = str(tmp_path / "emb.tsv")
        table.export_text(path)
        line = open(path, encoding="utf-8").read().strip()
        key, values = line.split("\t")
        assert key == "author/jan van eyck"
        assert [float(v) for v in values.split()] == [1.5, -2.25]

    def test_matrix_for_missing_key(self):
        table = n2v.EmbeddingTable(dim=2, vectors={"painting/a": np.zeros(2)})
        with pytest.raises(KeyError):
            table.matrix_for(["painting/b"])

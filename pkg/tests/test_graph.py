"""Tape construction, known values, gradient routing, and FD agreement."""

import math

import numpy as np
import pytest

from ntp.graph import (
    BACKEND,
    DEFAULT_MU,
    EmbeddingMatrix,
    Graph,
    GraphNumericsError,
    finite_diff_check,
    separated_embeddings,
)

EXP_MINUS_1 = 0.36787944117144233
SIGMA_1 = 0.7310585786300049


def unit_gap_matrix():
    # rows at Euclidean distance exactly 1
    data = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    return EmbeddingMatrix(data, k=3)


class TestRbf:
    def test_same_row_is_one(self):
        emb = EmbeddingMatrix.xavier(3, 4, seed=1)
        g = Graph(emb)
        n = g.rbf(g.lookup(2), g.lookup(2, shared=False))
        assert n.value == 1.0

    def test_unit_distance_default_width(self):
        g = Graph(unit_gap_matrix())
        n = g.rbf(g.lookup(0), g.lookup(1))
        np.testing.assert_allclose(n.value, EXP_MINUS_1, rtol=1e-12)

    def test_symmetry(self):
        emb = EmbeddingMatrix.xavier(5, 6, seed=3)
        g = Graph(emb)
        ab = g.rbf(g.lookup(1), g.lookup(4))
        ba = g.rbf(g.lookup(4), g.lookup(1))
        assert ab.value == ba.value

    def test_wider_kernel_is_larger(self):
        g = Graph(unit_gap_matrix())
        narrow = g.rbf(g.lookup(0), g.lookup(1), mu=0.5)
        wide = g.rbf(g.lookup(0), g.lookup(1), mu=2.0)
        assert narrow.value < wide.value < 1.0

    def test_gradient_zero_at_zero_distance(self):
        emb = EmbeddingMatrix.xavier(2, 4, seed=0)
        g = Graph(emb)
        n = g.rbf(g.lookup(1), g.lookup(1, shared=False))
        _, pg = g.backward(n)
        assert np.all(pg == 0.0)

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(11)
        emb = EmbeddingMatrix(rng.normal(scale=0.4, size=(4, 5)), k=5)
        g = Graph(emb)
        n = g.rbf(g.lookup(0), g.lookup(2))
        report = finite_diff_check(g, n)
        assert report.passed and not report.tie_detected
        assert report.max_rel_err <= 1e-6


class TestMinMax:
    def test_values(self):
        emb = EmbeddingMatrix.xavier(2, 2, seed=0)
        g = Graph(emb)
        xs = [g.constant(v) for v in (0.5, 0.2, 0.9)]
        assert g.min_of(xs).value == 0.2
        assert g.max_of(xs).value == 0.9

    def test_adjoint_routes_to_single_extremum(self):
        emb = EmbeddingMatrix.xavier(2, 2, seed=0)
        g = Graph(emb)
        xs = [g.constant(v) for v in (0.5, 0.2, 0.9)]
        mn = g.min_of(xs)
        adj, _ = g.backward(mn)
        assert [adj[x.id] for x in xs] == [0.0, 1.0, 0.0]

    def test_tie_routes_to_first(self):
        emb = EmbeddingMatrix.xavier(2, 2, seed=0)
        g = Graph(emb)
        xs = [g.constant(v) for v in (0.3, 0.3, 0.7)]
        adj, _ = g.backward(g.min_of(xs))
        assert [adj[x.id] for x in xs] == [1.0, 0.0, 0.0]
        ys = [g.constant(v) for v in (0.7, 0.9, 0.9)]
        adj2, _ = g.backward(g.max_of(ys))
        assert [adj2[y.id] for y in ys] == [0.0, 1.0, 0.0]

    def test_single_input_passthrough(self):
        emb = EmbeddingMatrix.xavier(2, 2, seed=0)
        g = Graph(emb)
        x = g.constant(0.42)
        assert g.min_of([x]).value == 0.42


class TestComplexScore:
    def test_real_unit_vectors_score_sigma_one(self):
        # k=1: rows are (re, im); s=i=j=(1,0) gives sigmoid(1)
        data = np.array([[1.0, 0.0]])
        emb = EmbeddingMatrix(data, k=1, mode="complex")
        g = Graph(emb)
        s = g.lookup(0)
        n = g.complex_score(s, s, s)
        np.testing.assert_allclose(n.value, SIGMA_1, rtol=1e-12)

    def test_zero_vectors_score_half(self):
        emb = EmbeddingMatrix(np.zeros((2, 6)), k=3, mode="complex")
        g = Graph(emb)
        n = g.complex_score(g.lookup(0), g.lookup(1), g.lookup(1, shared=False))
        assert n.value == 0.5

    def test_symmetric_when_imaginary_zero(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(3, 8))
        data[:, 4:] = 0.0
        emb = EmbeddingMatrix(data, k=4, mode="complex")
        g = Graph(emb)
        s, i, j = g.lookup(0), g.lookup(1), g.lookup(2)
        assert g.complex_score(s, i, j).value == g.complex_score(s, j, i).value

    def test_asymmetric_with_imaginary_part(self):
        rng = np.random.default_rng(6)
        emb = EmbeddingMatrix(rng.normal(size=(3, 8)), k=4, mode="complex")
        g = Graph(emb)
        s, i, j = g.lookup(0), g.lookup(1), g.lookup(2)
        assert g.complex_score(s, i, j).value != g.complex_score(s, j, i).value

    def test_requires_complex_mode(self):
        emb = EmbeddingMatrix.xavier(3, 4, seed=0)
        g = Graph(emb)
        with pytest.raises(ValueError, match="complex"):
            g.complex_score(g.lookup(0), g.lookup(1), g.lookup(2))

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(7)
        emb = EmbeddingMatrix(rng.normal(scale=0.5, size=(3, 8)), k=4,
                              mode="complex")
        g = Graph(emb)
        n = g.complex_score(g.lookup(0), g.lookup(1), g.lookup(2))
        report = finite_diff_check(g, n)
        assert report.passed and report.max_rel_err <= 1e-6

    def test_gradient_with_aliased_rows(self):
        # s == j: gradients for the shared row must accumulate both roles
        rng = np.random.default_rng(8)
        emb = EmbeddingMatrix(rng.normal(scale=0.5, size=(2, 6)), k=3,
                              mode="complex")
        g = Graph(emb)
        n = g.complex_score(g.lookup(0), g.lookup(1), g.lookup(0, shared=False))
        report = finite_diff_check(g, n)
        assert report.passed and report.max_rel_err <= 1e-6


class TestScalarOps:
    def setup_method(self):
        self.g = Graph(EmbeddingMatrix.xavier(2, 2, seed=0))

    def test_sigmoid(self):
        np.testing.assert_allclose(
            self.g.sigmoid(self.g.constant(1.0)).value, SIGMA_1, rtol=1e-12
        )
        # extreme inputs saturate without overflow
        assert self.g.sigmoid(self.g.constant(-800.0)).value == 0.0
        assert self.g.sigmoid(self.g.constant(800.0)).value == 1.0

    def test_clamp_floor_and_ceiling(self):
        assert self.g.clamp(self.g.constant(0.0)).value == 1e-10
        assert self.g.clamp(self.g.constant(2.0)).value == 1.0 - 1e-10
        assert self.g.clamp(self.g.constant(0.3)).value == 0.3

    def test_clamp_gradient_zero_outside(self):
        x = self.g.constant(2.0)
        adj, _ = self.g.backward(self.g.clamp(x))
        assert adj[x.id] == 0.0
        y = self.g.constant(0.3)
        adj2, _ = self.g.backward(self.g.clamp(y))
        assert adj2[y.id] == 1.0

    def test_neg_log(self):
        np.testing.assert_allclose(
            self.g.neg_log(self.g.constant(0.5)).value, math.log(2.0), rtol=1e-12
        )
        np.testing.assert_allclose(
            self.g.neg_log(self.g.constant(0.25), complement=True).value,
            -math.log(0.75), rtol=1e-12,
        )

    def test_sum(self):
        xs = [self.g.constant(v) for v in (0.1, 0.2, 0.3)]
        np.testing.assert_allclose(self.g.sum_of(xs).value, 0.6, rtol=1e-12)
        adj, _ = self.g.backward(self.g.sum_of(xs))
        assert all(adj[x.id] == 1.0 for x in xs)

    def test_nan_aborts_with_node_id(self):
        with pytest.raises(GraphNumericsError) as exc:
            self.g.neg_log(self.g.constant(-1.0))
        assert exc.value.node_id >= 0

    def test_forward_detects_nan_after_mutation(self):
        c = self.g.constant(0.5)
        self.g.neg_log(c)
        self.g.set_const(c, -1.0)
        with pytest.raises(GraphNumericsError):
            self.g.forward()


class TestDeterminismAndReuse:
    def test_forward_bit_identical(self):
        rng = np.random.default_rng(9)
        emb = EmbeddingMatrix(rng.normal(size=(6, 5)), k=5)
        g = Graph(emb)
        ks = [g.rbf(g.lookup(i), g.lookup((i + 1) % 6)) for i in range(6)]
        root = g.max_of([g.min_of(ks[:3]), g.min_of(ks[3:])])
        v1 = g.forward()[root.id]
        v2 = g.forward()[root.id]
        assert v1 == v2
        a1, p1 = g.backward(root)
        a2, p2 = g.backward(root)
        assert np.array_equal(a1, a2) and np.array_equal(p1, p2)

    def test_eager_values_match_forward(self):
        rng = np.random.default_rng(10)
        emb = EmbeddingMatrix(rng.normal(size=(4, 3)), k=3)
        g = Graph(emb)
        n = g.min_of([g.rbf(g.lookup(0), g.lookup(1)),
                      g.rbf(g.lookup(2), g.lookup(3))])
        eager = n.value
        assert g.forward()[n.id] == eager

    def test_set_row_reroutes_lookup(self):
        g = Graph(unit_gap_matrix())
        slot = g.lookup(0, shared=False)
        n = g.rbf(g.lookup(0), slot)
        assert n.value == 1.0
        g.set_row(slot, 1)
        vals = g.forward()
        np.testing.assert_allclose(vals[n.id], EXP_MINUS_1, rtol=1e-12)

    def test_shared_lookup_deduplicated(self):
        g = Graph(unit_gap_matrix())
        assert g.lookup(0).id == g.lookup(0).id
        assert g.lookup(0, shared=False).id != g.lookup(0).id


class TestFiniteDiffCheck:
    def test_mixed_random_graphs(self):
        rng = np.random.default_rng(21)
        failures = 0
        checked = 0
        for trial in range(12):
            emb = EmbeddingMatrix(rng.normal(scale=0.45, size=(8, 8)), k=4,
                                  mode="complex")
            g = Graph(emb)
            kernels = [
                g.rbf(g.lookup(int(a)), g.lookup(int(b), shared=False))
                for a, b in rng.integers(0, 8, size=(6, 2))
                if a != b
            ]
            scores = [
                g.complex_score(g.lookup(int(s)), g.lookup(int(i), shared=False),
                                g.lookup(int(j), shared=False))
                for s, i, j in rng.integers(0, 8, size=(2, 3))
            ]
            pool = kernels + scores
            mins = [g.min_of(pool[i::2]) for i in range(2)]
            root = g.neg_log(g.clamp(g.max_of(mins)))
            report = finite_diff_check(g, root, max_entries=40, seed=trial)
            if report.tie_detected:
                continue
            checked += 1
            if not report.passed:
                failures += 1
        assert checked >= 6
        assert failures == 0

    def test_exact_tie_is_flagged_not_failed(self):
        emb = EmbeddingMatrix.xavier(4, 3, seed=2)
        g = Graph(emb)
        k = g.rbf(g.lookup(0), g.lookup(1))
        dup = g.rbf(g.lookup(0, shared=False), g.lookup(1, shared=False))
        root = g.min_of([k, dup])
        report = finite_diff_check(g, root)
        assert report.tie_detected
        assert report.passed

    def test_reports_entries(self):
        rng = np.random.default_rng(3)
        emb = EmbeddingMatrix(rng.normal(scale=0.4, size=(3, 4)), k=4)
        g = Graph(emb)
        report = finite_diff_check(g, g.rbf(g.lookup(0), g.lookup(1)))
        assert len(report.entries) == 2 * 4
        rows = {r for r, *_ in report.entries}
        assert rows == {0, 1}


class TestEmbeddingMatrix:
    def test_xavier_bounds_and_determinism(self):
        emb = EmbeddingMatrix.xavier(50, 10, seed=4)
        limit = math.sqrt(3.0 / 10)
        assert np.abs(emb.data).max() <= limit
        emb2 = EmbeddingMatrix.xavier(50, 10, seed=4)
        assert np.array_equal(emb.data, emb2.data)

    def test_complex_mode_width(self):
        emb = EmbeddingMatrix.xavier(5, 7, mode="complex", seed=0)
        assert emb.data.shape == (5, 14)
        assert emb.k == 7

    def test_separated_embeddings_distance(self):
        emb = separated_embeddings(6, distance=20.0)
        d = emb.data[0] - emb.data[3]
        np.testing.assert_allclose(math.sqrt(float(d @ d)), 20.0, rtol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="shape"):
            EmbeddingMatrix(np.zeros((3, 5)), k=4)


class TestBackends:
    def test_backend_is_reported(self):
        assert BACKEND in ("python", "compiled")

    @pytest.mark.skipif(BACKEND != "compiled", reason="compiled tape not built")
    def test_python_and_compiled_agree(self):
        rng = np.random.default_rng(17)
        emb = EmbeddingMatrix(rng.normal(scale=0.5, size=(10, 8)), k=4,
                              mode="complex")
        g = Graph(emb)
        kernels = [g.rbf(g.lookup(int(a)), g.lookup(int(b), shared=False))
                   for a, b in rng.integers(0, 10, size=(8, 2))]
        score = g.complex_score(g.lookup(0), g.lookup(3, shared=False),
                                g.lookup(7, shared=False))
        root = g.neg_log(g.clamp(g.max_of([g.min_of(kernels), score])))
        v_py = g.forward(backend="python")[root.id]
        v_cy = g.forward(backend="compiled")[root.id]
        np.testing.assert_allclose(v_cy, v_py, rtol=1e-12)
        _, p_py = g.backward(root, backend="python")
        _, p_cy = g.backward(root, backend="compiled")
        np.testing.assert_allclose(p_cy, p_py, rtol=1e-10, atol=1e-14)

    def test_mu_default(self):
        np.testing.assert_allclose(DEFAULT_MU, 1.0 / math.sqrt(2.0))

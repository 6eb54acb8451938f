import numpy as np
import pytest

from arxnet.model import ArxNetwork, PolynomialMatrix, TimeSeries, random_network, simulate
from arxnet.regression import (
    InsufficientDataError,
    Weights,
    assemble_network,
    build_problem,
    linear_layout,
    stack_experiments,
    weights_to_rows,
)


def exact_weights(net, node, k):
    """True coefficient vector in the regression's column convention."""
    lay = linear_layout(net.p, net.m, node, k)
    w = np.zeros(lay.n_columns)
    for g, (kind, j) in enumerate(lay.sources):
        if kind == "node":
            coeffs = -net.A.entry(node, j)
        elif kind == "input":
            coeffs = net.B.entry(node, j)
        else:
            coeffs = net.A.entry(node, node)
        block = np.zeros(k)
        block[: len(coeffs)] = coeffs  # ascending lag
        w[lay.group_slice(g)] = block[::-1]  # column c holds lag k - c
    return Weights(w=w, layout=lay)


class TestBuildProblem:
    def test_single_node_k1_signs(self):
        data = TimeSeries(Y=np.array([[1.0, 2.0, 3.0]]), U=np.zeros((0, 3)))
        prob = build_problem(data, node=0, k=1)
        np.testing.assert_array_equal(prob.y, [3.0, 2.0])
        np.testing.assert_array_equal(prob.Phi, [[-2.0], [-1.0]])

    def test_two_node_column_order(self):
        Y = np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]])
        data = TimeSeries(Y=Y, U=np.zeros((0, 3)))
        prob = build_problem(data, node=0, k=1)
        # cross block (node 2) first, negated self block last
        np.testing.assert_array_equal(prob.Phi, [[20.0, -2.0], [10.0, -1.0]])
        assert prob.layout.sources == (("node", 1), ("self", 0))

    def test_lag_convention_impulse(self):
        # impulse in source signal at time 3 shows up at exactly the columns
        # whose lag maps back to time 3
        T, k = 10, 4
        Y = np.zeros((2, T))
        Y[1, 2] = 1.0  # y2(3) = 1
        data = TimeSeries(Y=Y, U=np.zeros((0, T)))
        prob = build_problem(data, node=0, k=k)
        block = prob.Phi[:, prob.layout.group_slice(0)]  # node-2 block
        rows, cols = np.nonzero(block)
        row_times = np.arange(T, k, -1)
        for r, c in zip(rows, cols):
            assert row_times[r] - (k - c) == 3

    def test_insufficient_data(self):
        data = TimeSeries(Y=np.ones((1, 4)), U=np.zeros((0, 4)))
        with pytest.raises(InsufficientDataError):
            build_problem(data, node=0, k=4)

    def test_exact_fit_recovers_truth(self):
        # noiseless with one dedicated input per node, so every node is
        # independently excited and the exact fit is unique at k = true order
        node_mask = np.random.default_rng(1).random((3, 3)) < 0.5
        input_mask = np.eye(3, dtype=bool)
        net = random_network(
            3, 3, 2, density=0.5, coeff_scale=0.4, seed=2, noise_var=0.0,
            structure=(node_mask, input_mask),
        )
        data = simulate(net, T=80, seed=3)
        for node in range(3):
            prob = build_problem(data, node, k=2)
            w_hat, *_ = np.linalg.lstsq(prob.Phi, prob.y, rcond=None)
            resid = np.linalg.norm(prob.y - prob.Phi @ w_hat)
            assert resid < 1e-9
            w_true = exact_weights(net, node, 2)
            np.testing.assert_allclose(w_hat, w_true.w, atol=1e-8)


class TestRoundTrip:
    def test_polynomial_reconstruction_matches_truth(self):
        node_mask = np.random.default_rng(7).random((3, 3)) < 0.5
        input_mask = np.eye(3, dtype=bool)
        net = random_network(
            3, 3, 3, density=0.5, coeff_scale=0.4, seed=8, noise_var=0.0,
            structure=(node_mask, input_mask),
        )
        data = simulate(net, T=120, seed=9)
        k = 3
        recovered = []
        for node in range(3):
            prob = build_problem(data, node, k)
            w_hat, *_ = np.linalg.lstsq(prob.Phi, prob.y, rcond=None)
            recovered.append(Weights(w=w_hat, layout=prob.layout))
        est = assemble_network(recovered)
        true_a = net.A.dense(k)
        est_a = est.A.dense(k)
        np.testing.assert_allclose(est_a, true_a, atol=1e-8)
        np.testing.assert_allclose(est.B.dense(k), net.B.dense(k), atol=1e-8)

    def test_weights_to_rows_signs(self):
        # y1(t) = -a y1(t-1) - c y2(t-1): regression stores (w_cross, w_self) = (-c, a)
        a, c = 0.3, -0.25
        lay = linear_layout(2, 0, 0, 1)
        w = Weights(w=np.array([-c, a]), layout=lay)
        a_row, b_row = weights_to_rows(w)
        assert a_row[1] == [c]
        assert a_row[0] == [a]
        assert b_row == []


class TestStackExperiments:
    def make(self, seed, T=20):
        net = random_network(2, 1, 2, 0.5, 0.4, seed=5, noise_var=0.01)
        data = simulate(net, T=T, seed=seed)
        return build_problem(data, node=0, k=2)

    def test_stack_of_one_is_identity(self):
        prob = self.make(1)
        stacked = stack_experiments([prob])
        np.testing.assert_array_equal(stacked.y, prob.y)
        np.testing.assert_array_equal(stacked.Phi, prob.Phi)

    def test_row_counts_add(self):
        p1, p2 = self.make(1, T=16), self.make(2, T=16)
        stacked = stack_experiments([p1, p2])
        assert stacked.n_rows == 28
        np.testing.assert_array_equal(stacked.Phi[:14], p1.Phi)
        np.testing.assert_array_equal(stacked.Phi[14:], p2.Phi)

    def test_stacked_noiseless_fit_matches(self):
        net = random_network(2, 2, 2, 0.6, 0.4, seed=6, noise_var=0.0)
        d1 = simulate(net, T=40, seed=1)
        d2 = simulate(net, T=40, seed=2)
        p1 = build_problem(d1, 0, 2)
        p2 = build_problem(d2, 0, 2)
        stacked = stack_experiments([p1, p2])
        w_stack, *_ = np.linalg.lstsq(stacked.Phi, stacked.y, rcond=None)
        w_one, *_ = np.linalg.lstsq(p1.Phi, p1.y, rcond=None)
        np.testing.assert_allclose(w_stack, w_one, atol=1e-8)

    def test_layout_mismatch_rejected(self):
        net = random_network(2, 1, 2, 0.5, 0.4, seed=5, noise_var=0.01)
        data = simulate(net, T=20, seed=1)
        p_node0 = build_problem(data, 0, 2)
        p_node1 = build_problem(data, 1, 2)
        with pytest.raises(ValueError):
            stack_experiments([p_node0, p_node1])


class TestLayout:
    def test_linear_layout_counts(self):
        lay = linear_layout(p=4, m=2, node=1, k=3)
        assert lay.n_groups == 6
        assert lay.n_columns == 18
        assert lay.sources[-1] == ("self", 1)
        assert lay.self_index == 5
        assert lay.sources[:3] == (("node", 0), ("node", 2), ("node", 3))
        assert lay.sources[3:5] == (("input", 0), ("input", 1))

    def test_self_group_must_be_unique(self):
        with pytest.raises(ValueError):
            linear_layout(2, 0, 0, 2).__class__(
                p=2, m=0, k=2, sizes=(2, 2), sources=(("self", 0), ("self", 0)), self_index=1
            )

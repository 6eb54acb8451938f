import numpy as np
import pytest

from arxnet.model import (
    ArxNetwork,
    GenerationError,
    InstabilityError,
    PolynomialMatrix,
    TimeSeries,
    boolean_topology,
    load_network,
    load_timeseries,
    random_network,
    save_network,
    save_timeseries,
    simulate,
)


def single_node(a, b=None, noise=0.0):
    """y(t) = a*y(t-1) + b*u(t-1) + e(t) in network form."""
    A = PolynomialMatrix(1, 1, [[(-a,)]])
    if b is None:
        B = PolynomialMatrix(1, 0, [[]])
        m = 0
    else:
        B = PolynomialMatrix(1, 1, [[(b,)]])
        m = 1
    return ArxNetwork(p=1, m=m, A=A, B=B, noise_var=noise)


class TestPolynomialMatrix:
    def test_effective_order_and_dense(self):
        pm = PolynomialMatrix(2, 2, [[(0.1, 0.0), ()], [(0.3,), (0.0, 0.0, 0.5)]])
        assert pm.max_order == 3
        dense = pm.dense(3)
        assert dense.shape == (2, 2, 3)
        assert dense[1, 1, 2] == 0.5
        assert dense[0, 1].tolist() == [0.0, 0.0, 0.0]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            PolynomialMatrix(2, 1, [[(0.1,)]])


class TestRandomNetwork:
    def test_scalar_ar1_stable(self):
        for seed in range(20):
            net = random_network(1, 0, 1, density=1.0, coeff_scale=0.5, seed=seed)
            a = net.A.entry(0, 0)
            assert a.size == 1 and abs(a[0]) <= 0.5
            assert net.spectral_radius() < 0.95

    def test_benchmark_shape(self):
        net = random_network(10, 1, 3, density=0.2, coeff_scale=0.5, seed=3)
        assert net.p == 10 and net.m == 1
        assert net.max_order <= 3
        assert net.spectral_radius() < 0.95
        # diagonal entries always nonzero
        for i in range(10):
            assert len(net.A.coeffs[i][i]) >= 1

    def test_determinism(self):
        a = random_network(6, 2, 3, 0.3, 0.5, seed=11)
        b = random_network(6, 2, 3, 0.3, 0.5, seed=11)
        assert a.A.coeffs == b.A.coeffs
        assert a.B.coeffs == b.B.coeffs

    def test_structure_respected(self):
        node_mask = np.zeros((3, 3), dtype=bool)
        node_mask[0, 1] = True
        input_mask = np.zeros((3, 0), dtype=bool)
        net = random_network(3, 0, 2, 0.5, 0.5, seed=0, structure=(node_mask, input_mask))
        assert len(net.A.coeffs[0][1]) > 0
        assert net.A.coeffs[0][2] == ()
        assert net.A.coeffs[1][0] == ()

    def test_generation_failure(self):
        # huge coefficients cannot be stabilized
        with pytest.raises(GenerationError):
            random_network(4, 0, 3, density=1.0, coeff_scale=50.0, seed=0, max_attempts=20)

    def test_stability_enforced_over_seeds(self):
        for seed in range(50):
            net = random_network(5, 1, 3, 0.4, 0.5, seed=seed)
            assert net.spectral_radius() < 0.95


class TestSimulate:
    def test_zero_everything_gives_zero(self):
        net = single_node(0.5, noise=0.0)
        data = simulate(net, T=10, U=np.zeros((0, 10)), seed=0)
        assert np.all(data.Y == 0)

    def test_geometric_impulse_response(self):
        # unit impulse through b=1 at lag 1 onto y(t) = 0.5 y(t-1) + u(t-1)
        net = single_node(0.5, b=1.0, noise=0.0)
        U = np.zeros((1, 8))
        U[0, 0] = 1.0
        data = simulate(net, T=8, U=U, seed=0)
        expected = np.concatenate([[0.0], 0.5 ** np.arange(7)])
        np.testing.assert_allclose(data.Y[0], expected, atol=1e-15)

    def test_benchmark_sample_count(self):
        net = random_network(10, 1, 3, 0.2, 0.5, seed=4)
        data = simulate(net, T=20, seed=5)
        assert data.Y.shape == (10, 20)
        assert data.U.shape == (1, 20)

    def test_deterministic_given_seed(self):
        net = random_network(3, 1, 2, 0.5, 0.5, seed=9)
        d1 = simulate(net, T=30, seed=1)
        d2 = simulate(net, T=30, seed=1)
        assert np.array_equal(d1.Y, d2.Y) and np.array_equal(d1.U, d2.U)

    def test_noiseless_has_no_noise_rng(self):
        # identical inputs => identical outputs, independent of the seed
        net = single_node(0.5, b=1.0, noise=0.0)
        U = np.random.default_rng(0).normal(size=(1, 25))
        d1 = simulate(net, T=25, U=U, seed=1)
        d2 = simulate(net, T=25, U=U, seed=999)
        assert np.array_equal(d1.Y, d2.Y)

    def test_stable_networks_stay_finite(self):
        for seed in range(100):
            net = random_network(4, 1, 3, 0.3, 0.5, seed=seed)
            data = simulate(net, T=50, seed=seed + 1)
            assert np.isfinite(data.Y).all()

    def test_unstable_network_raises(self):
        net = single_node(-1.5, b=1.0, noise=0.0)  # |pole| = 1.5
        U = np.ones((1, 200))
        with pytest.raises(InstabilityError):
            simulate(net, T=200, U=U, seed=0)

    def test_too_short_raises(self):
        net = random_network(2, 0, 3, 0.5, 0.5, seed=0)
        with pytest.raises(ValueError):
            simulate(net, T=2, seed=0)


class TestBooleanTopology:
    def test_empty_offdiagonal(self):
        net = single_node(0.5)
        topo = boolean_topology(net)
        assert not topo.node_edges.any()

    def test_edge_from_single_coefficient(self):
        A = PolynomialMatrix(2, 2, [[(0.4,), (0.0, 0.3, 0.0)], [(), (0.2,)]])
        net = ArxNetwork(p=2, m=0, A=A, B=PolynomialMatrix(2, 0, [[], []]), noise_var=0.0)
        topo = boolean_topology(net, zero_tol=1e-6)
        assert topo.node_edges[0, 1]
        assert not topo.node_edges[1, 0]

    def test_all_below_tolerance(self):
        A = PolynomialMatrix(2, 2, [[(0.4,), (1e-9,)], [(1e-9,), (0.2,)]])
        net = ArxNetwork(p=2, m=0, A=A, B=PolynomialMatrix(2, 0, [[], []]), noise_var=0.0)
        topo = boolean_topology(net, zero_tol=1e-6)
        assert not topo.node_edges.any()

    def test_monotone_in_tolerance(self):
        net = random_network(6, 1, 3, 0.4, 0.5, seed=21)
        prev = None
        for tol in (1e-8, 1e-4, 1e-2, 1e-1, 1.0):
            topo = boolean_topology(net, zero_tol=tol)
            count = topo.node_edges.sum() + topo.input_edges.sum()
            if prev is not None:
                assert count <= prev
            prev = count


class TestIO:
    def test_network_roundtrip(self, tmp_path):
        net = random_network(4, 2, 3, 0.4, 0.5, seed=13)
        path = tmp_path / "truth.json"
        save_network(net, path)
        back = load_network(path)
        assert back.A.coeffs == net.A.coeffs
        assert back.B.coeffs == net.B.coeffs
        assert back.noise_var == net.noise_var

    def test_timeseries_roundtrip(self, tmp_path):
        net = random_network(3, 1, 2, 0.5, 0.5, seed=17)
        data = simulate(net, T=25, seed=3)
        path = tmp_path / "data.csv"
        save_timeseries(data, path)
        back = load_timeseries(path)
        np.testing.assert_array_equal(back.Y, data.Y)
        np.testing.assert_array_equal(back.U, data.U)
        header = path.read_text().splitlines()[0]
        assert header == "t,y1,y2,y3,u1"

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            load_timeseries(path)

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,y1\n1,1.0\n2,oops\n")
        with pytest.raises(ValueError, match="3"):
            load_timeseries(path)


class TestTimeSeries:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            TimeSeries(Y=np.zeros((2, 5)), U=np.zeros((1, 4)))

    def test_nan_rejected(self):
        Y = np.zeros((1, 5))
        Y[0, 2] = np.nan
        with pytest.raises(ValueError):
            TimeSeries(Y=Y, U=np.zeros((0, 5)))

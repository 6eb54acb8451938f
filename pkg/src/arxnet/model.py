"""Multivariable ARX networks: random generation, simulation, Boolean topology.

A network of p node signals y_1..y_p and m exogenous inputs u_1..u_m evolves
as

    y(t) + A_1 y(t-1) + ... + A_na y(t-na) = B_1 u(t-1) + ... + B_nb u(t-nb) + e(t)

where the A_d / B_d are p x p / p x m coefficient matrices and e(t) is
zero-mean white Gaussian noise with a per-node variance.  Entry (i, j) of the
polynomial matrices is stored as a plain coefficient list ordered by
ascending lag (position d-1 multiplies the signal d steps back); the diagonal
of A additionally carries an implicit unit term at lag zero, so the model is
monic in y_i(t).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PolynomialMatrix",
    "ArxNetwork",
    "TimeSeries",
    "NetworkTopology",
    "GenerationError",
    "InstabilityError",
    "random_network",
    "simulate",
    "boolean_topology",
    "save_network",
    "load_network",
    "save_timeseries",
    "load_timeseries",
]

DEFAULT_STABILITY_RADIUS = 0.95
DEFAULT_ZERO_TOL = 1e-6
SIMULATION_BLOWUP = 1e12


class GenerationError(RuntimeError):
    """Raised when rejection sampling fails to produce a stable network."""


class InstabilityError(RuntimeError):
    """Raised when a simulated trajectory exceeds the blow-up guard."""


def _freeze_coeffs(coeffs):
    return tuple(tuple(tuple(float(c) for c in entry) for entry in row) for row in coeffs)


@dataclass(frozen=True)
class PolynomialMatrix:
    """Matrix of lag polynomials, one coefficient list per entry.

    ``coeffs[i][j][d]`` multiplies the source signal at lag d+1.  Trailing
    zeros are permitted; the effective order of an entry is the index of its
    last nonzero coefficient.
    """

    rows: int
    cols: int
    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) != self.rows or any(len(r) != self.cols for r in self.coeffs):
            raise ValueError("coefficient table shape does not match rows x cols")
        object.__setattr__(self, "coeffs", _freeze_coeffs(self.coeffs))

    @property
    def max_order(self) -> int:
        return max((len(e) for row in self.coeffs for e in row), default=0)

    def entry(self, i: int, j: int) -> np.ndarray:
        return np.asarray(self.coeffs[i][j], dtype=float)

    def dense(self, order: int | None = None) -> np.ndarray:
        """Return a (rows, cols, order) array, zero-padded per entry."""
        order = self.max_order if order is None else order
        if order < self.max_order:
            raise ValueError("requested order is below the stored maximum")
        out = np.zeros((self.rows, self.cols, order))
        for i, row in enumerate(self.coeffs):
            for j, entry in enumerate(row):
                out[i, j, : len(entry)] = entry
        return out

    def max_abs(self) -> np.ndarray:
        """Entrywise maximum absolute coefficient (zero for empty entries)."""
        out = np.zeros((self.rows, self.cols))
        for i, row in enumerate(self.coeffs):
            for j, entry in enumerate(row):
                out[i, j] = max((abs(c) for c in entry), default=0.0)
        return out


@dataclass(frozen=True)
class ArxNetwork:
    """Ground-truth or estimated ARX network.

    ``A`` is p x p (node coupling, implicit unit diagonal at lag zero), ``B``
    is p x m (input coupling), ``noise_var`` holds one innovation variance
    per node.
    """

    p: int
    m: int
    A: PolynomialMatrix
    B: PolynomialMatrix
    noise_var: tuple

    def __post_init__(self):
        if (self.A.rows, self.A.cols) != (self.p, self.p):
            raise ValueError("A must be p x p")
        if (self.B.rows, self.B.cols) != (self.p, self.m):
            raise ValueError("B must be p x m")
        nv = tuple(float(v) for v in np.broadcast_to(np.asarray(self.noise_var, dtype=float), (self.p,)))
        if any(v < 0 for v in nv):
            raise ValueError("noise variances must be nonnegative")
        object.__setattr__(self, "noise_var", nv)

    @property
    def max_order(self) -> int:
        return max(self.A.max_order, self.B.max_order)

    def companion_matrix(self) -> np.ndarray:
        """Companion form of the autoregressive part (pd x pd, d = A order)."""
        d = max(self.A.max_order, 1)
        Ad = self.A.dense(d)
        p = self.p
        C = np.zeros((p * d, p * d))
        for lag in range(d):
            C[:p, lag * p : (lag + 1) * p] = -Ad[:, :, lag]
        if d > 1:
            C[p:, : p * (d - 1)] = np.eye(p * (d - 1))
        return C

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.companion_matrix()))))


@dataclass(frozen=True)
class TimeSeries:
    """Node and input trajectories sampled at t = 1..T (stored column-wise)."""

    Y: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        U = np.asarray(self.U, dtype=float)
        if U.size == 0:
            U = np.zeros((0, Y.shape[1]))
        U = np.atleast_2d(U)
        if Y.shape[1] != U.shape[1]:
            raise ValueError("Y and U must cover the same time indices")
        if not (np.isfinite(Y).all() and np.isfinite(U).all()):
            raise ValueError("time series contains non-finite values")
        Y.setflags(write=False)
        U.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "U", U)

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    @property
    def time_index(self) -> np.ndarray:
        return np.arange(1, self.T + 1)


@dataclass(frozen=True)
class NetworkTopology:
    """Boolean interconnection structure: node_edges[i, j] means j -> i."""

    node_edges: np.ndarray
    input_edges: np.ndarray

    def __post_init__(self):
        ne = np.asarray(self.node_edges, dtype=bool)
        ie = np.asarray(self.input_edges, dtype=bool)
        if ne.ndim != 2 or ne.shape[0] != ne.shape[1]:
            raise ValueError("node_edges must be square")
        if ie.ndim != 2 or ie.shape[0] != ne.shape[0]:
            raise ValueError("input_edges must have one row per node")
        ne.setflags(write=False)
        ie.setflags(write=False)
        object.__setattr__(self, "node_edges", ne)
        object.__setattr__(self, "input_edges", ie)

    @property
    def p(self) -> int:
        return self.node_edges.shape[0]

    @property
    def m(self) -> int:
        return self.input_edges.shape[1]


def _draw_entry(rng, max_order: int, scale: float, floor: float) -> tuple:
    order = int(rng.integers(1, max_order + 1))
    mags = rng.uniform(floor, scale, size=order)
    signs = rng.choice((-1.0, 1.0), size=order)
    return tuple(float(c) for c in mags * signs)


def random_network(
    p: int,
    m: int,
    max_order: int,
    density: float,
    coeff_scale: float,
    seed,
    noise_var=0.01,
    coeff_min: float = 0.0,
    structure: tuple | None = None,
    max_attempts: int = 1000,
    stability_radius: float = DEFAULT_STABILITY_RADIUS,
) -> ArxNetwork:
    """Draw a random stable ARX network.

    Off-diagonal A entries and B entries are nonzero with probability
    ``density``; each nonzero polynomial receives a uniform random effective
    order in 1..max_order with coefficient magnitudes uniform in
    [coeff_min, coeff_scale] and random signs (coeff_min=0 gives the plain
    uniform [-coeff_scale, coeff_scale] law).  Diagonal A entries are always
    nonzero.  Candidates are rejected until the companion-form spectral
    radius is below ``stability_radius``.

    Parameters
    ----------
    coeff_min : nonzero-coefficient magnitude floor; raising it keeps every
        edge statistically visible in short records.
    structure : optional (node_mask, input_mask) pair of Boolean arrays
        fixing which entries are nonzero; used to redraw coefficients on a
        frozen topology.  When omitted the masks are drawn from ``density``.

    Raises
    ------
    GenerationError
        if ``max_attempts`` rejections pass without a stable draw.
    """
    if p < 1 or m < 0 or max_order < 1:
        raise ValueError("need p >= 1, m >= 0, max_order >= 1")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    if coeff_scale <= 0 or not 0 <= coeff_min <= coeff_scale:
        raise ValueError("need 0 <= coeff_min <= coeff_scale with coeff_scale > 0")
    rng = np.random.default_rng(seed)
    if structure is not None:
        node_mask = np.asarray(structure[0], dtype=bool)
        input_mask = np.asarray(structure[1], dtype=bool)
        if node_mask.shape != (p, p) or input_mask.shape != (p, m):
            raise ValueError("structure masks must be (p, p) and (p, m)")
    else:
        node_mask = rng.random((p, p)) < density
        input_mask = rng.random((p, m)) < density
    np.fill_diagonal(node_mask, True)

    for _ in range(max_attempts):
        a_coeffs = [
            [
                _draw_entry(rng, max_order, coeff_scale, coeff_min) if node_mask[i, j] else ()
                for j in range(p)
            ]
            for i in range(p)
        ]
        b_coeffs = [
            [
                _draw_entry(rng, max_order, coeff_scale, coeff_min) if input_mask[i, j] else ()
                for j in range(m)
            ]
            for i in range(p)
        ]
        net = ArxNetwork(
            p=p,
            m=m,
            A=PolynomialMatrix(p, p, a_coeffs),
            B=PolynomialMatrix(p, m, b_coeffs),
            noise_var=noise_var,
        )
        if net.spectral_radius() < stability_radius:
            return net
    raise GenerationError(
        f"no stable network within {max_attempts} draws "
        f"(p={p}, m={m}, max_order={max_order}, density={density}, coeff_scale={coeff_scale})"
    )


def simulate(net: ArxNetwork, T: int, input_var: float = 1.0, U=None, seed=0) -> TimeSeries:
    """Simulate ``T`` samples of the network from zero initial conditions.

    Inputs are i.i.d. Gaussian with variance ``input_var`` unless an explicit
    m x T array ``U`` is provided.  Node innovations are Gaussian with the
    per-node variances stored on the network; the noise block is only drawn
    when some variance is positive, so noiseless simulation has no RNG path
    beyond the input draw.
    """
    if T <= net.max_order:
        raise ValueError(f"need T > max effective order ({net.max_order}), got T={T}")
    rng = np.random.default_rng(seed)
    if U is None:
        U = rng.normal(0.0, np.sqrt(input_var), size=(net.m, T)) if net.m > 0 else np.zeros((0, T))
    else:
        U = np.asarray(U, dtype=float)
        if U.shape != (net.m, T):
            raise ValueError(f"U must have shape ({net.m}, {T}), got {U.shape}")
    nv = np.asarray(net.noise_var)
    if np.any(nv > 0):
        E = rng.normal(size=(net.p, T)) * np.sqrt(nv)[:, None]
    else:
        E = np.zeros((net.p, T))

    na = net.A.max_order
    nb = net.B.max_order
    Ad = net.A.dense(na) if na else np.zeros((net.p, net.p, 0))
    Bd = net.B.dense(nb) if nb else np.zeros((net.p, net.m, 0))
    Y = np.zeros((net.p, T))
    for t in range(T):
        acc = E[:, t].copy()
        for d in range(1, min(t, na) + 1):
            acc -= Ad[:, :, d - 1] @ Y[:, t - d]
        for d in range(1, min(t, nb) + 1):
            acc += Bd[:, :, d - 1] @ U[:, t - d]
        if np.max(np.abs(acc)) > SIMULATION_BLOWUP:
            raise InstabilityError(f"trajectory exceeded {SIMULATION_BLOWUP:g} at t={t + 1}")
        Y[:, t] = acc
    return TimeSeries(Y=Y, U=U)


def boolean_topology(net: ArxNetwork, zero_tol: float = DEFAULT_ZERO_TOL) -> NetworkTopology:
    """Edges are entries whose largest absolute coefficient exceeds zero_tol."""
    if zero_tol <= 0:
        raise ValueError("zero_tol must be positive")
    node = net.A.max_abs() > zero_tol
    np.fill_diagonal(node, False)
    inputs = net.B.max_abs() > zero_tol
    return NetworkTopology(node_edges=node, input_edges=inputs)


def save_network(net: ArxNetwork, path) -> None:
    payload = {
        "p": net.p,
        "m": net.m,
        "max_order": net.max_order,
        "A": [[list(e) for e in row] for row in net.A.coeffs],
        "B": [[list(e) for e in row] for row in net.B.coeffs],
        "noise_var": list(net.noise_var),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_network(path) -> ArxNetwork:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    p, m = payload["p"], payload["m"]
    return ArxNetwork(
        p=p,
        m=m,
        A=PolynomialMatrix(p, p, payload["A"]),
        B=PolynomialMatrix(p, m, payload["B"]),
        noise_var=payload["noise_var"],
    )


def save_timeseries(ts: TimeSeries, path) -> None:
    """CSV with header t,y1..yp,u1..um, one row per time index, repr precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"]
            + [f"y{i + 1}" for i in range(ts.p)]
            + [f"u{j + 1}" for j in range(ts.m)]
        )
        for t in range(ts.T):
            writer.writerow(
                [t + 1]
                + [repr(float(v)) for v in ts.Y[:, t]]
                + [repr(float(v)) for v in ts.U[:, t]]
            )


def load_timeseries(path) -> TimeSeries:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty data file") from None
        if not header or header[0].strip() != "t":
            raise ValueError(f"{path}: first column must be 't'")
        p = sum(1 for h in header if h.strip().startswith("y"))
        m = sum(1 for h in header if h.strip().startswith("u"))
        if p == 0 or 1 + p + m != len(header):
            raise ValueError(f"{path}: header must be t,y1..yp,u1..um")
        ys, us = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            ys.append(vals[:p])
            us.append(vals[p:])
        if not ys:
            raise ValueError(f"{path}: no data rows")
    Y = np.asarray(ys).T
    U = np.asarray(us).T if m else np.zeros((0, Y.shape[1]))
    return TimeSeries(Y=Y, U=U)

"""Per-node linear regression assembly for ARX network identification.

For node i with lag upper bound k, the target vector stacks y_i(T) down to
y_i(k+1) and the regressor matrix holds one block of k lagged samples per
source signal.  Blocks are ordered: cross nodes by ascending index (i
excluded), then inputs, then the node's own history last; the self block is
negated so the autoregressive coefficients are stored with positive sign.
Within a block, column c (0-based) at row time s carries the source at lag
k - c, so the last column is the freshest sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ArxNetwork, PolynomialMatrix, TimeSeries

__all__ = [
    "GroupLayout",
    "RegressionProblem",
    "Weights",
    "InsufficientDataError",
    "build_problem",
    "stack_experiments",
    "linear_layout",
    "weights_to_rows",
    "assemble_network",
]


class InsufficientDataError(ValueError):
    """Raised when the lag bound leaves no regression rows."""


@dataclass(frozen=True)
class GroupLayout:
    """Column grouping of a regression problem.

    ``sources`` tags each group: ("node", j) for a cross node, ("input", j),
    ("self", i), or ("dict", gid) for nonlinear dictionary groups appended
    after the linear ones.  ``sizes`` holds the per-group column counts (k
    for every linear group; dictionary groups may differ).
    """

    p: int
    m: int
    k: int
    sizes: tuple
    sources: tuple
    self_index: int

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "sources", tuple(tuple(s) for s in self.sources))
        if len(self.sizes) != len(self.sources):
            raise ValueError("sizes and sources disagree")
        if [s for s in self.sources if s[0] == "self"] != [self.sources[self.self_index]]:
            raise ValueError("layout must contain exactly one self group at self_index")

    @property
    def n_groups(self) -> int:
        return len(self.sizes)

    @property
    def n_columns(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def group_slice(self, g: int) -> slice:
        off = self.offsets
        return slice(int(off[g]), int(off[g + 1]))

    @property
    def group_of_column(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_groups), self.sizes)


def linear_layout(p: int, m: int, node: int, k: int) -> GroupLayout:
    sources = [("node", j) for j in range(p) if j != node]
    sources += [("input", j) for j in range(m)]
    sources += [("self", node)]
    return GroupLayout(
        p=p, m=m, k=k, sizes=(k,) * (p + m), sources=tuple(sources), self_index=p + m - 1
    )


@dataclass(frozen=True)
class RegressionProblem:
    """One node's regression: y ~ Phi w under the layout's group structure."""

    node: int
    y: np.ndarray
    Phi: np.ndarray
    layout: GroupLayout

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        if Phi.shape != (y.size, self.layout.n_columns):
            raise ValueError(
                f"Phi shape {Phi.shape} does not match {y.size} rows x {self.layout.n_columns} columns"
            )
        y.setflags(write=False)
        Phi.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Phi", Phi)

    @property
    def n_rows(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class Weights:
    """Stacked coefficient vector partitioned by a GroupLayout."""

    w: np.ndarray
    layout: GroupLayout

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size != self.layout.n_columns:
            raise ValueError("weight length does not match layout")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def group(self, g: int) -> np.ndarray:
        return self.w[self.layout.group_slice(g)]

    def group_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.group(g)) for g in range(self.layout.n_groups)])


def _lag_block(x: np.ndarray, k: int, T: int) -> np.ndarray:
    """Rows are times T down to k+1; column c holds x at lag k - c."""
    rows = np.arange(T, k, -1)  # 1-based row times, descending
    cols = np.arange(k)
    idx = rows[:, None] - k + cols[None, :] - 1  # 0-based indices of x(s - k + c)
    return x[idx]


def build_problem(data: TimeSeries, node: int, k: int) -> RegressionProblem:
    """Assemble the lag-k regression for one node of a time series.

    Raises
    ------
    InsufficientDataError
        if k >= T so no regression rows remain.
    """
    if not 0 <= node < data.p:
        raise ValueError(f"node index {node} out of range 0..{data.p - 1}")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k >= data.T:
        raise InsufficientDataError(f"lag bound k={k} needs more than {data.T} samples")
    layout = linear_layout(data.p, data.m, node, k)
    blocks = []
    for kind, j in layout.sources:
        if kind == "node":
            blocks.append(_lag_block(data.Y[j], k, data.T))
        elif kind == "input":
            blocks.append(_lag_block(data.U[j], k, data.T))
        else:
            blocks.append(-_lag_block(data.Y[node], k, data.T))
    y = data.Y[node][np.arange(data.T - 1, k - 1, -1)]
    return RegressionProblem(node=node, y=y, Phi=np.hstack(blocks), layout=layout)


def stack_experiments(problems) -> RegressionProblem:
    """Vertically concatenate same-node problems from independent experiments."""
    problems = list(problems)
    if not problems:
        raise ValueError("nothing to stack")
    first = problems[0]
    for prob in problems[1:]:
        if prob.layout != first.layout or prob.node != first.node:
            raise ValueError("stacked problems must share node and layout")
    return RegressionProblem(
        node=first.node,
        y=np.concatenate([p.y for p in problems]),
        Phi=np.vstack([p.Phi for p in problems]),
        layout=first.layout,
    )


def weights_to_rows(weights: Weights) -> tuple:
    """Map one node's weights back to its A-row and B-row coefficient lists.

    Within a linear group, column c carries lag k - c, so coefficient lists
    (ascending lag) are the reversed blocks.  Cross-node blocks flip sign:
    the network convention puts the coupling on the left-hand side of the
    recursion while the regression predicts with it on the right.
    Dictionary groups are ignored.
    """
    lay = weights.layout
    a_row = [[0.0] * lay.k for _ in range(lay.p)]
    b_row = [[0.0] * lay.k for _ in range(lay.m)]
    for g, (kind, j) in enumerate(lay.sources):
        block = weights.group(g)[::-1]
        if kind == "node":
            a_row[j] = list(-block)
        elif kind == "input":
            b_row[j] = list(block)
        elif kind == "self":
            a_row[j] = list(block)
    return a_row, b_row


def assemble_network(weights_per_node, noise_vars=None) -> ArxNetwork:
    """Combine per-node Weights into an estimated ArxNetwork."""
    weights_per_node = list(weights_per_node)
    lay = weights_per_node[0].layout
    p, m = lay.p, lay.m
    if len(weights_per_node) != p:
        raise ValueError(f"need one Weights per node, got {len(weights_per_node)} for p={p}")
    a_coeffs, b_coeffs = [], []
    for node, wts in enumerate(weights_per_node):
        if wts.layout.sources[wts.layout.self_index] != ("self", node):
            raise ValueError(f"weights at position {node} were built for a different node")
        a_row, b_row = weights_to_rows(wts)
        a_coeffs.append(a_row)
        b_coeffs.append(b_row)
    return ArxNetwork(
        p=p,
        m=m,
        A=PolynomialMatrix(p, p, a_coeffs),
        B=PolynomialMatrix(p, m, b_coeffs),
        noise_var=(0.0 if noise_vars is None else noise_vars),
    )

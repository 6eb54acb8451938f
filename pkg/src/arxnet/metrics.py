"""Scoring identified networks against ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ArxNetwork, NetworkTopology
from .regression import Weights

__all__ = [
    "TopologyScore",
    "CoeffError",
    "score_topology",
    "coeff_inf_error",
    "detect_topology",
    "DETECTION_REL_TOL",
]

DETECTION_REL_TOL = 1e-3


@dataclass(frozen=True)
class TopologyScore:
    """True-positive and false-positive edge rates; exact means all and none."""

    tp_rate: float
    fp_rate: float
    exact: bool


@dataclass(frozen=True)
class CoeffError:
    """Largest absolute coefficient deviation over all aligned entries."""

    inf_norm: float


def score_topology(est: NetworkTopology, truth: NetworkTopology) -> TopologyScore:
    """Pool node and input edges; self-loops are excluded from both counts.

    With no true edges the true-positive rate is vacuously one.
    """
    if est.node_edges.shape != truth.node_edges.shape or est.input_edges.shape != truth.input_edges.shape:
        raise ValueError("estimate and truth have different dimensions")
    p = truth.p
    off = ~np.eye(p, dtype=bool)
    true_pos_edges = np.concatenate([truth.node_edges[off], truth.input_edges.ravel()])
    est_edges = np.concatenate([est.node_edges[off], est.input_edges.ravel()])
    n_true = int(true_pos_edges.sum())
    n_non = true_pos_edges.size - n_true
    tp = float(np.sum(est_edges & true_pos_edges) / n_true) if n_true else 1.0
    fp = float(np.sum(est_edges & ~true_pos_edges) / n_non) if n_non else 0.0
    return TopologyScore(tp_rate=tp, fp_rate=fp, exact=(tp == 1.0 and fp == 0.0))


def coeff_inf_error(est: ArxNetwork, truth: ArxNetwork) -> CoeffError:
    """Max absolute deviation across all A and B coefficients, aligned by lag.

    Shorter polynomials are zero-padded, so a pruned or absent entry counts
    with its full true magnitude.
    """
    if (est.p, est.m) != (truth.p, truth.m):
        raise ValueError(f"cannot align ({est.p},{est.m}) estimate with ({truth.p},{truth.m}) truth")
    err = 0.0
    for est_pm, true_pm in ((est.A, truth.A), (est.B, truth.B)):
        order = max(est_pm.max_order, true_pm.max_order)
        if order == 0:
            continue
        diff = est_pm.dense(order) - true_pm.dense(order)
        err = max(err, float(np.max(np.abs(diff))))
    return CoeffError(inf_norm=err)


def detect_topology(weights_per_node, rel_tol: float = DETECTION_REL_TOL) -> NetworkTopology:
    """Edges from solved weights: a group is detected when it survived
    pruning and its norm clears ``rel_tol`` times the node's largest group norm."""
    weights_per_node = list(weights_per_node)
    lay = weights_per_node[0].layout
    p, m = lay.p, lay.m
    node_edges = np.zeros((p, p), dtype=bool)
    input_edges = np.zeros((p, m), dtype=bool)
    for node, wts in enumerate(weights_per_node):
        if not isinstance(wts, Weights):
            raise TypeError("detect_topology expects Weights instances")
        norms = wts.group_norms()
        ref = norms.max(initial=0.0)
        if ref == 0.0:
            continue
        for g, (kind, j) in enumerate(wts.layout.sources):
            detected = norms[g] > rel_tol * ref
            if kind == "node" and detected:
                node_edges[node, j] = True
            elif kind == "input" and detected:
                input_edges[node, j] = True
    return NetworkTopology(node_edges=node_edges, input_edges=input_edges)

"""Expectation-maximization on the marginalized objective.

The E step forms the Gaussian posterior of the weights; the M step refreshes
each element variance with its posterior second moment, each group variance
with the group average of those moments, and (optionally) the noise variance
with the residual-plus-shrinkage expression.  Small variances are pruned
between iterations.  At a fixed point the closed-form updates coincide with
the stationary conditions of the objective, which `stationarity_residual`
evaluates directly as a convergence certificate.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import objective as obj
from .cccp import (
    LAMBDA_FLOOR,
    Diagnostics,
    SolveConfig,
    SolveResult,
    SolverFailure,
    _apply_pruning,
    _grid_select,
    _initial_hyper,
    _propagate_group_prunes,
)
from .objective import Hyperparameters, posterior
from .regression import RegressionProblem, Weights

__all__ = ["solve_em", "stationarity_residual"]


def _second_moments(prob, h):
    post = posterior(prob, h)
    return post, post.mu**2 + np.diag(post.Sigma)


def _lambda_update(prob, h, post, cfg) -> float:
    lay = prob.layout
    s = obj.effective_variance(lay, h)
    alive = s > 0
    resid = prob.y - prob.Phi @ post.mu
    shrink = 0.0
    if alive.any():
        tau = 1.0 / s[alive]
        shrink = float(np.sum(1.0 - tau * np.diag(post.Sigma)[alive]))
    if cfg.em_lambda_denominator == "rows":
        denom = prob.n_rows
    else:
        denom = lay.n_columns
    return max((float(resid @ resid) + h.lam * shrink) / denom, LAMBDA_FLOOR)


def _em_step(prob, h, cfg, pruned_cols, pruned_groups, estimate):
    """One round of closed-form moment updates; returns (new h, posterior)."""
    lay = prob.layout
    post, m2 = _second_moments(prob, h)
    beta = h.beta.copy()
    gamma = h.gamma.copy()
    if h.mode in ("combined", "element_only"):
        beta = np.where(pruned_cols, 0.0, m2)
    if h.mode in ("combined", "group_only"):
        learned = np.ones(lay.n_groups, dtype=bool)
        if h.mode == "combined":
            learned = ~h.group_penalty_mask
        for g in range(lay.n_groups):
            if learned[g] and not pruned_groups[g]:
                gamma[g] = float(np.mean(m2[lay.group_slice(g)]))
    lam = _lambda_update(prob, h, post, cfg) if estimate else h.lam
    return h.replace(beta=beta, gamma=gamma, lam=lam), post


def solve_em(prob: RegressionProblem, cfg: SolveConfig | None = None) -> SolveResult:
    """Fit one node by alternating posterior moments and closed-form updates.

    Returns the posterior mean under the final hyperparameters (zero on
    pruned coordinates) together with those hyperparameters and diagnostics.
    """
    cfg = cfg or SolveConfig()
    if cfg.lambda_mode == "grid":
        return _grid_select(prob, cfg, solve_em)
    lay = prob.layout
    h = _initial_hyper(prob, cfg)
    diag = Diagnostics(solver="em")
    pruned_cols = np.zeros(lay.n_columns, dtype=bool)
    pruned_groups = np.zeros(lay.n_groups, dtype=bool)
    estimate = cfg.lambda_mode == "estimate"
    prev_obj = None
    for it in range(1, cfg.max_outer + 1):
        diag.iterations = it
        h, post = _em_step(prob, h, cfg, pruned_cols, pruned_groups, estimate)
        if cfg.prune:
            h = _apply_pruning(h, it, cfg, pruned_cols, pruned_groups, diag.prune_events)
            _propagate_group_prunes(lay, pruned_cols, pruned_groups)
        value = obj.eval_L2(prob, h)
        diag.objective_trace.append(value)
        diag.lambda_history.append(h.lam)
        if not np.isfinite(value):
            raise SolverFailure(
                f"non-finite objective at iteration {it}",
                state={"hyper": h, "iteration": it},
            )
        if prev_obj is not None and abs(prev_obj - value) <= cfg.stop_tol * max(1.0, abs(prev_obj)):
            diag.converged = True
            diag.stop_reason = "objective"
            break
        prev_obj = value
    else:
        diag.stop_reason = "max_outer"
    final_post = posterior(prob, h)
    mu = np.where(obj.alive_columns(lay, h), final_post.mu, 0.0)
    return SolveResult(weights=Weights(w=mu, layout=lay), hyper=h, diagnostics=diag)


def stationarity_residual(
    prob: RegressionProblem,
    h: Hyperparameters,
    include_lambda: bool = True,
    lambda_denominator: str = "paper",
) -> float:
    """Largest violation of the fixed-point equations at the given state.

    Element equation: 1/beta_q = (mu_q^2 + Sigma_qq)/beta_q^2.  Group
    equation: k_g/gamma_g = sum_j (mu^2 + Sigma_jj)/gamma_g^2.  Noise
    equation: lam equals the residual-plus-shrinkage update.  Evaluated on
    active (positive-variance) quantities only.
    """
    lay = prob.layout
    post, m2 = _second_moments(prob, h)
    res = 0.0
    if h.mode in ("combined", "element_only"):
        act = h.beta > 0
        if h.mode == "combined":
            act &= obj.alive_columns(lay, h)
        if act.any():
            b = h.beta[act]
            res = max(res, float(np.max(np.abs(-m2[act] / b**2 + 1.0 / b))))
    if h.mode in ("combined", "group_only"):
        for g in range(lay.n_groups):
            if h.mode == "combined" and h.group_penalty_mask[g]:
                continue
            gam = h.gamma[g]
            if gam <= 0:
                continue
            sl = lay.group_slice(g)
            k_g = sl.stop - sl.start
            res = max(res, abs(-float(np.sum(m2[sl])) / gam**2 + k_g / gam))
    if include_lambda:
        cfg = SolveConfig(em_lambda_denominator=lambda_denominator)
        res = max(res, abs(h.lam - _lambda_update(prob, h, post, replace(cfg, lambda_mode="estimate"))))
    return res

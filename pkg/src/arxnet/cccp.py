"""Outer reweighting loop: linearize the concave part, solve the weighted
sparse-group subproblem, refresh hyperparameters in closed form, prune.

Each iteration majorizes the marginal objective at the current
hyperparameters.  The linearized problem admits closed-form element/group
variances and (optionally) noise variance as functions of the weights, which
collapses it to a single weighted sparse-group problem with either a squared
or an un-squared residual norm, depending on whether the noise variance is
held fixed or estimated alongside.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import objective as obj
from .objective import GradV, Hyperparameters, default_hyperparameters, grad_v
from .regression import RegressionProblem, Weights
from .sgl import SglWeights, _apg, _Groups, _power_lipschitz, _slices, _socp

__all__ = [
    "SolveConfig",
    "Diagnostics",
    "SolveResult",
    "SolverFailure",
    "solve_cccp",
    "update_hyper",
]

LAMBDA_FLOOR = 1e-12
DEAD_WEIGHT = 1e30  # element penalty pinning a pruned coordinate at zero


class SolverFailure(RuntimeError):
    """Raised when an iteration produces a non-finite objective."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class SolveConfig:
    """Shared configuration for the hyperparameter-learning solvers."""

    mode: str = "combined"
    penalize_self_group: bool = False
    lambda_mode: str = "estimate"
    lambda_value: float | None = None
    lambda_grid: tuple | None = None
    max_outer: int = 50
    stop_tol: float = 1e-6
    support_stable_iters: int = 3
    prune: bool = True
    prune_tol: float = 1e-6
    inner_tol: float = 1e-10
    inner_max_iter: int = 3000
    socp_tol: float = 1e-9
    socp_max_iter: int = 60
    em_lambda_denominator: str = "paper"
    inner_solver: str = "apg"
    init_jitter_seed: int | None = None
    lambda_init_scale: float = 1.0
    warmup_em: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in obj.MODES:
            raise ValueError(f"mode must be one of {obj.MODES}")
        if self.lambda_mode not in ("estimate", "fixed", "grid"):
            raise ValueError("lambda_mode must be estimate, fixed, or grid")
        if self.lambda_mode == "fixed" and (self.lambda_value is None or self.lambda_value <= 0):
            raise ValueError("fixed lambda_mode requires a positive lambda_value")
        if self.em_lambda_denominator not in ("paper", "rows"):
            raise ValueError("em_lambda_denominator must be 'paper' or 'rows'")
        if self.inner_solver not in ("apg", "admm"):
            raise ValueError("inner_solver must be 'apg' or 'admm'")
        if self.inner_solver == "admm" and self.lambda_mode != "estimate":
            raise ValueError("the admm inner solver requires lambda_mode='estimate'")
        for name in ("stop_tol", "prune_tol", "inner_tol", "socp_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Diagnostics:
    solver: str
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""
    objective_trace: list = field(default_factory=list)
    lambda_history: list = field(default_factory=list)
    prune_events: list = field(default_factory=list)
    selected_lambda: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "objective_trace": list(self.objective_trace),
            "lambda_history": list(self.lambda_history),
            "prune_events": list(self.prune_events),
            "selected_lambda": self.selected_lambda,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class SolveResult:
    weights: Weights
    hyper: Hyperparameters
    diagnostics: Diagnostics

    def __iter__(self):
        return iter((self.weights, self.hyper, self.diagnostics))


def _initial_hyper(prob: RegressionProblem, cfg: SolveConfig) -> Hyperparameters:
    if cfg.lambda_mode == "fixed":
        lam0 = cfg.lambda_value
    else:
        lam0 = max(float(np.var(prob.y)) * cfg.lambda_init_scale, LAMBDA_FLOOR)
    h = default_hyperparameters(
        prob.layout, mode=cfg.mode, penalize_self_group=cfg.penalize_self_group, lam=lam0
    )
    if cfg.init_jitter_seed is not None:
        rng = np.random.default_rng(cfg.init_jitter_seed)
        h = h.replace(
            beta=h.beta * rng.lognormal(0.0, 0.5, h.beta.size),
            gamma=h.gamma * rng.lognormal(0.0, 0.5, h.gamma.size),
        )
    return h


def update_hyper(
    w: Weights,
    g: SglWeights,
    residual_norm: float,
    cfg: SolveConfig,
    base: Hyperparameters,
) -> Hyperparameters:
    """Closed-form refresh: beta = |w|/sqrt(g_beta), gamma = ||w_g||/sqrt(g_gamma),
    and, when the noise variance is being estimated, lam = ||r||/sqrt(g_lambda).

    A zero weight yields a zero variance, which marks the coordinate or group
    for pruning.  Exempted groups keep their (unused) gamma.
    """
    lay = w.layout
    beta = base.beta.copy()
    gamma = base.gamma.copy()
    if base.mode in ("combined", "element_only"):
        wa = np.abs(w.w)
        safe = np.where(g.element > 0, g.element, 1.0)
        beta = np.where(g.element > 0, wa / safe, np.where(wa > 0, beta, 0.0))
    if base.mode in ("combined", "group_only"):
        for grp in range(lay.n_groups):
            if g.group[grp] > 0:
                gamma[grp] = np.linalg.norm(w.group(grp)) / g.group[grp]
            elif base.mode == "group_only":
                gamma[grp] = 0.0 if np.linalg.norm(w.group(grp)) == 0 else gamma[grp]
    lam = base.lam
    if cfg.lambda_mode == "estimate":
        if g.data <= 0:
            raise SolverFailure("nonpositive data reweighting term")
        lam = max(residual_norm / g.data, LAMBDA_FLOOR)
    return base.replace(beta=beta, gamma=gamma, lam=lam)


def _subproblem_weights(
    prob: RegressionProblem, h: Hyperparameters, g: GradV, pruned_cols, pruned_groups
) -> SglWeights:
    """Square-root reweighting terms; pruned coordinates get a pinning weight."""
    lay = prob.layout
    alive = obj.alive_columns(lay, h) & ~pruned_cols
    if h.mode == "group_only":
        elem = np.zeros(lay.n_columns)
    else:
        elem = np.sqrt(np.where(np.isfinite(g.g_beta), np.maximum(g.g_beta, 0.0), 0.0))
    elem = np.where(alive, elem, DEAD_WEIGHT)
    grp = np.where(np.isfinite(g.g_gamma), np.sqrt(np.maximum(g.g_gamma, 0.0)), 0.0)
    for i in range(lay.n_groups):
        sl = lay.group_slice(i)
        if pruned_groups[i] or not alive[sl].any():
            grp[i] = 0.0  # element pins already force the block to zero
    return SglWeights(element=elem, group=grp, data=math.sqrt(max(g.g_lambda, 0.0)))


def _apply_pruning(h: Hyperparameters, it: int, cfg: SolveConfig, pruned_cols, pruned_groups, events):
    """Threshold small variances relative to the current largest one."""
    beta = h.beta.copy()
    gamma = h.gamma.copy()
    lay_groups = gamma.size
    if h.mode in ("combined", "element_only"):
        ref = beta.max(initial=0.0)
        cut = cfg.prune_tol * ref
        kill = (~pruned_cols) & (beta <= cut)
        for q in np.where(kill)[0]:
            events.append({"iter": it, "kind": "element", "index": int(q)})
        pruned_cols |= kill
        beta[kill] = 0.0
    if h.mode in ("combined", "group_only"):
        learned = ~h.group_penalty_mask if h.mode == "combined" else np.ones(lay_groups, dtype=bool)
        vals = gamma[learned & ~pruned_groups]
        ref = vals.max(initial=0.0)
        cut = cfg.prune_tol * ref
        for i in range(lay_groups):
            if learned[i] and not pruned_groups[i] and gamma[i] <= cut:
                events.append({"iter": it, "kind": "group", "index": int(i)})
                pruned_groups[i] = True
                gamma[i] = 0.0
    return h.replace(beta=beta, gamma=gamma)


def _propagate_group_prunes(lay, pruned_cols, pruned_groups):
    for i in range(lay.n_groups):
        if pruned_groups[i]:
            pruned_cols[lay.group_slice(i)] = True


class _ProblemCache:
    """Gram-form quantities shared across outer iterations."""

    def __init__(self, prob: RegressionProblem):
        self.gram = prob.Phi.T @ prob.Phi
        self.phity = prob.Phi.T @ prob.y
        self.yty = float(prob.y @ prob.y)
        self.y_norm = float(np.linalg.norm(prob.y))
        self.groups = _Groups(_slices(prob.layout), prob.layout.n_columns)
        self.lip = _power_lipschitz(self.gram)


def _solve_subproblem(prob, cache: _ProblemCache, sw: SglWeights, lam, w0, cfg, estimate_lambda: bool):
    if estimate_lambda and cfg.inner_solver == "admm":
        from .admm import solve_sharing_admm

        return solve_sharing_admm(prob, sw, inner_tol=cfg.inner_tol, inner_max_iter=cfg.inner_max_iter)
    if estimate_lambda:
        res = _socp(
            cache.gram, cache.phity, cache.yty, cache.y_norm, cache.groups, sw,
            None if w0 is None else w0.w,
            cfg.socp_tol, cfg.socp_max_iter, cfg.inner_tol, cfg.inner_max_iter,
            lip_gram=cache.lip,
        )
        return Weights(w=res.w, layout=prob.layout)
    res = _apg(
        cache.gram, cache.phity, cache.yty, cache.groups, sw.element, sw.group, 1.0 / lam,
        None if w0 is None else w0.w,
        cfg.inner_tol, cfg.inner_max_iter,
        lip=cache.lip / lam,
    )
    return Weights(w=res.w, layout=prob.layout)


def _default_grid(prob: RegressionProblem) -> tuple:
    scale = max(float(np.var(prob.y)), 1e-8)
    return tuple(scale * 10.0**e for e in range(-6, 1))


def _grid_select(prob: RegressionProblem, cfg: SolveConfig, solver):
    """Hold out the trailing quarter of rows, score candidate noise variances
    by held-out squared prediction error, then refit on everything."""
    n = prob.n_rows
    n_hold = max(1, n // 4)
    n_train = n - n_hold
    if n_train < 1:
        raise ValueError("not enough rows for hold-out selection")
    train = RegressionProblem(
        node=prob.node, y=prob.y[:n_train], Phi=prob.Phi[:n_train], layout=prob.layout
    )
    y_hold, phi_hold = prob.y[n_train:], prob.Phi[n_train:]
    grid = cfg.lambda_grid if cfg.lambda_grid else _default_grid(prob)
    best_lam, best_score = None, np.inf
    for lam in grid:
        sub_cfg = replace(cfg, lambda_mode="fixed", lambda_value=float(lam), lambda_grid=None)
        try:
            res = solver(train, sub_cfg)
        except SolverFailure:
            continue
        err = y_hold - phi_hold @ res.weights.w
        score = float(err @ err)
        if score < best_score:
            best_lam, best_score = float(lam), score
    if best_lam is None:
        raise SolverFailure("hold-out selection failed for every candidate noise variance")
    final_cfg = replace(cfg, lambda_mode="fixed", lambda_value=best_lam, lambda_grid=None)
    result = solver(prob, final_cfg)
    result.diagnostics.selected_lambda = best_lam
    result.diagnostics.notes.append(f"hold-out selected lambda={best_lam:g}")
    return result


def solve_cccp(prob: RegressionProblem, cfg: SolveConfig | None = None) -> SolveResult:
    """Fit one node's weights and hyperparameters by the reweighting loop.

    Returns the final weights (zero on pruned coordinates), the learned
    hyperparameters, and a diagnostics record with the objective trace and
    prune events.  When the initial noise-variance guess lands in the
    null-model basin (everything zeroed on the first pass, an absorbing
    state), the run restarts with a smaller guess.
    """
    cfg = cfg or SolveConfig()
    if cfg.lambda_mode == "grid":
        return _grid_select(prob, cfg, solve_cccp)
    result = _cccp_run(prob, cfg)
    scale = cfg.lambda_init_scale
    attempts = 0
    while cfg.lambda_mode == "estimate" and attempts < 2 and not result.weights.w.any():
        scale *= 0.01
        attempts += 1
        result = _cccp_run(prob, replace(cfg, lambda_init_scale=scale))
        result.diagnostics.notes.append(f"null-model restart {attempts} with lambda0 scale {scale:g}")
    return result


def _cccp_run(prob: RegressionProblem, cfg: SolveConfig) -> SolveResult:
    lay = prob.layout
    h = _initial_hyper(prob, cfg)
    diag = Diagnostics(solver="cccp")
    w = Weights(w=np.zeros(lay.n_columns), layout=lay)
    pruned_cols = np.zeros(lay.n_columns, dtype=bool)
    pruned_groups = np.zeros(lay.n_groups, dtype=bool)
    support = None
    stable = 0
    estimate = cfg.lambda_mode == "estimate"
    prev_obj = None
    cache = _ProblemCache(prob)
    for it in range(1, cfg.max_outer + 1):
        diag.iterations = it
        warming = it <= cfg.warmup_em
        if warming:
            # moment-update rounds first: they cannot zero a coordinate
            # exactly, so the loop escapes poorly scaled starting points
            # before the exact-zeroing reweighted steps take over; they also
            # decrease the joint objective evaluated at the posterior mean.
            from .em import _em_step

            h, post = _em_step(prob, h, cfg, pruned_cols, pruned_groups, estimate)
            alive = obj.alive_columns(lay, h)
            w = Weights(w=np.where(alive, post.mu, 0.0), layout=lay)
        else:
            g = grad_v(prob, h)
            sw = _subproblem_weights(prob, h, g, pruned_cols, pruned_groups)
            w = _solve_subproblem(prob, cache, sw, h.lam, w, cfg, estimate)
            residual = float(np.linalg.norm(prob.y - prob.Phi @ w.w))
            h = update_hyper(w, sw, residual, cfg, h)
        if cfg.prune:
            h = _apply_pruning(h, it, cfg, pruned_cols, pruned_groups, diag.prune_events)
            _propagate_group_prunes(lay, pruned_cols, pruned_groups)
            if pruned_cols.any() and np.any(w.w[pruned_cols] != 0):
                w = Weights(w=np.where(pruned_cols, 0.0, w.w), layout=lay)
        value = obj.eval_L1(prob, h, w.w)
        diag.objective_trace.append(value)
        diag.lambda_history.append(h.lam)
        if not np.isfinite(value):
            raise SolverFailure(
                f"non-finite objective at iteration {it}",
                state={"hyper": h, "weights": w.w.copy(), "iteration": it},
            )
        if warming:
            continue
        new_support = w.w != 0
        if support is not None and np.array_equal(new_support, support):
            stable += 1
        else:
            stable = 1
        support = new_support
        if prev_obj is not None and abs(prev_obj - value) <= cfg.stop_tol * max(1.0, abs(prev_obj)):
            diag.converged = True
            diag.stop_reason = "objective"
            break
        if stable >= cfg.support_stable_iters:
            diag.converged = True
            diag.stop_reason = "support"
            break
        prev_obj = value
    else:
        diag.stop_reason = "max_outer"
    return SolveResult(weights=w, hyper=h, diagnostics=diag)

"""Scaled ADMM for the 2-norm-loss sparse-group problem as a sharing problem.

Each group's columns contribute a share phi_g w_g to the fitted signal; the
consensus variable is the average share z_bar with a single scaled dual
vector u.  Group updates are small weighted sparse-group problems that may
run in any order (they read only the previous round's state); the consensus
update is an analytic group-lasso shrink.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .regression import RegressionProblem, Weights
from .sgl import SglWeights, _apg, _Groups, _power_lipschitz

__all__ = ["AdmmDivergence", "z_update_analytic", "solve_sharing_admm"]


class AdmmDivergence(RuntimeError):
    """Raised when residuals grow persistently; rescaling rho usually helps."""


def z_update_analytic(c: np.ndarray, sigma: float) -> np.ndarray:
    """Minimizer of 1/2 ||z - c||^2 + sigma ||z||_2 (vector soft threshold)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    c = np.asarray(c, dtype=float)
    norm = np.linalg.norm(c)
    if norm <= sigma:
        return np.zeros_like(c)
    return c * (1.0 - sigma / norm)


class AdmmInfo(NamedTuple):
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    rho: float


def solve_sharing_admm(
    prob: RegressionProblem,
    sw: SglWeights,
    rho: float = 1.0,
    eps_abs: float = 1e-6,
    eps_rel: float = 1e-4,
    max_iter: int = 1000,
    inner_tol: float = 1e-12,
    inner_max_iter: int = 4000,
    adapt_rho: bool = True,
    return_info: bool = False,
):
    """Minimize dw ||y - Phi w||_2 + weighted sparse-group penalty by sharing.

    Group blocks are updated in parallelizable fashion from the previous
    round's averages, then the consensus and dual vectors advance in
    sequence.  Stops when primal and dual residuals pass the combined
    absolute/relative thresholds.
    """
    if sw.data <= 0:
        raise ValueError("data weight must be positive")
    if rho <= 0:
        raise ValueError("rho must be positive")
    lay = prob.layout
    n, N = prob.n_rows, lay.n_groups
    y = prob.y
    blocks = [prob.Phi[:, lay.group_slice(g)] for g in range(N)]
    grams = [B.T @ B for B in blocks]
    lips = [_power_lipschitz(G) for G in grams]
    block_groups = [_Groups([slice(0, b.shape[1])], b.shape[1]) for b in blocks]
    w_blocks = [np.zeros(b.shape[1]) for b in blocks]
    shares = [np.zeros(n) for _ in range(N)]
    phiw_bar = np.zeros(n)
    z_bar = np.zeros(n)
    u = np.zeros(n)

    r_norm = s_norm = np.inf
    best_r = np.inf
    stall = 0
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        for g in range(N):
            # quadratic target from the previous round's state
            v = shares[g] - phiw_bar + z_bar - u
            sl = lay.group_slice(g)
            res = _apg(
                grams[g],
                blocks[g].T @ v,
                float(v @ v),
                block_groups[g],
                sw.element[sl],
                np.array([sw.group[g]]),
                rho,
                w_blocks[g],
                inner_tol,
                inner_max_iter,
                lip=rho * lips[g],
            )
            w_blocks[g] = res.w
        shares = [blocks[g] @ w_blocks[g] for g in range(N)]
        phiw_bar = np.mean(shares, axis=0) if N else np.zeros(n)
        c = u + phiw_bar - y / N
        sigma = sw.data / rho
        z_hat = z_update_analytic(c, sigma)
        z_old = z_bar
        z_bar = z_hat + y / N
        u = u + phiw_bar - z_bar

        r_norm = np.sqrt(N) * float(np.linalg.norm(phiw_bar - z_bar))
        s_norm = rho * np.sqrt(N) * float(np.linalg.norm(z_bar - z_old))
        scale = max(
            np.sqrt(N) * float(np.linalg.norm(phiw_bar)),
            np.sqrt(N) * float(np.linalg.norm(z_bar)),
        )
        eps_pri = np.sqrt(n * N) * eps_abs + eps_rel * scale
        eps_dual = np.sqrt(n * N) * eps_abs + eps_rel * rho * np.sqrt(N) * float(np.linalg.norm(u))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break

        if r_norm < best_r:
            best_r = r_norm
            stall = 0
        else:
            stall += 1
            if stall >= 50 and r_norm > 10.0 * best_r:
                raise AdmmDivergence(
                    f"primal residual grew from {best_r:.3e} to {r_norm:.3e}; try a different rho"
                )
        if adapt_rho and it % 10 == 0:
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                u /= 2.0
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                u *= 2.0

    weights = Weights(w=np.concatenate(w_blocks), layout=lay)
    info = AdmmInfo(
        iterations=it,
        primal_residual=r_norm,
        dual_residual=s_norm,
        converged=converged,
        rho=rho,
    )
    return (weights, info) if return_info else weights

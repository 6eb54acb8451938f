"""Combined element+group Gaussian prior: posterior, marginal objectives, gradients.

Each regression coefficient w_q carries an element variance beta_q and each
group a shared variance gamma_g.  The effective prior on a coordinate is the
(improper) product of the two zero-mean Gaussians, with precision
1/beta_q + 1/gamma_g; dropping one factor yields the classic element-only or
group-only schemes.  Hyperparameters are fit by minimizing the negative log
marginal likelihood, available in two equivalent forms:

    L1(w, h) = ||y - Phi w||^2 / lam + w' S^-1 w + log|B + Gamma|
               + log|lam I + Phi S Phi'|                       (joint in w)
    L2(h)    = y' [lam I + Phi S Phi']^-1 y + log|B + Gamma|
               + log|lam I + Phi S Phi'|                       (w eliminated)

where S is the diagonal of effective variances.  The log|B + Gamma| term only
collects coordinates governed by *both* priors; element-only and group-only
modes have no such term (their prior normalizers cancel exactly), and groups
exempted from the group penalty behave element-only.

A zero variance marks a pruned coordinate or group: its column drops out of
every matrix and its weight is pinned at zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .regression import GroupLayout, RegressionProblem

__all__ = [
    "MODES",
    "Hyperparameters",
    "PosteriorGaussian",
    "GradV",
    "default_hyperparameters",
    "effective_variance",
    "alive_columns",
    "posterior",
    "eval_L1",
    "eval_L2",
    "u_term",
    "v_term",
    "prior_logdet",
    "data_logdet",
    "data_fit",
    "grad_v",
]

MODES = ("combined", "element_only", "group_only")


@dataclass(frozen=True)
class Hyperparameters:
    """Element variances beta, group variances gamma, noise variance lam.

    ``group_penalty_mask[g]`` exempts group g from the group-sparsity prior
    (used for the autoregressive self group of ARX nodes); exempted groups
    are governed by their element variances alone.
    """

    beta: np.ndarray
    gamma: np.ndarray
    lam: float
    mode: str = "combined"
    group_penalty_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        beta = np.asarray(self.beta, dtype=float).ravel()
        gamma = np.asarray(self.gamma, dtype=float).ravel()
        if np.any(beta < 0) or np.any(gamma < 0) or self.lam < 0:
            raise ValueError("variances must be nonnegative")
        mask = self.group_penalty_mask
        mask = np.zeros(gamma.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).ravel()
        if mask.size != gamma.size:
            raise ValueError("group_penalty_mask must have one entry per group")
        beta.setflags(write=False)
        gamma.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "group_penalty_mask", mask)

    def replace(self, **kw) -> "Hyperparameters":
        data = {
            "beta": self.beta,
            "gamma": self.gamma,
            "lam": self.lam,
            "mode": self.mode,
            "group_penalty_mask": self.group_penalty_mask,
        }
        data.update(kw)
        return Hyperparameters(**data)


@dataclass(frozen=True)
class PosteriorGaussian:
    """Gaussian posterior over the weight vector (zeros on pruned coordinates)."""

    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        Sigma = np.asarray(self.Sigma, dtype=float)
        if Sigma.shape != (mu.size, mu.size):
            raise ValueError("Sigma must be square and match mu")
        mu.setflags(write=False)
        Sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)


class GradV(NamedTuple):
    g_beta: np.ndarray
    g_gamma: np.ndarray
    g_lambda: float


def default_hyperparameters(
    layout: GroupLayout,
    mode: str = "combined",
    penalize_self_group: bool = False,
    lam: float = 1.0,
) -> Hyperparameters:
    """Unit-variance starting point; optionally exempt the self group."""
    mask = np.zeros(layout.n_groups, dtype=bool)
    if not penalize_self_group:
        mask[layout.self_index] = True
    return Hyperparameters(
        beta=np.ones(layout.n_columns),
        gamma=np.ones(layout.n_groups),
        lam=lam,
        mode=mode,
        group_penalty_mask=mask,
    )


def _participation(layout: GroupLayout, h: Hyperparameters):
    """Per-coordinate flags: does the element / group prior govern the coordinate."""
    gidx = layout.group_of_column
    if h.mode == "element_only":
        use_e = np.ones(layout.n_columns, dtype=bool)
        use_g = np.zeros(layout.n_columns, dtype=bool)
    elif h.mode == "group_only":
        use_e = np.zeros(layout.n_columns, dtype=bool)
        use_g = np.ones(layout.n_columns, dtype=bool)
    else:
        use_e = np.ones(layout.n_columns, dtype=bool)
        use_g = ~h.group_penalty_mask[gidx]
    return use_e, use_g, gidx


def effective_variance(layout: GroupLayout, h: Hyperparameters) -> np.ndarray:
    """Diagonal of S: per-coordinate prior variance (zero = pruned)."""
    use_e, use_g, gidx = _participation(layout, h)
    beta = h.beta
    gam = h.gamma[gidx]
    s = np.zeros(layout.n_columns)
    both = use_e & use_g
    denom = beta + gam
    ok = both & (denom > 0)
    s[ok] = beta[ok] * gam[ok] / denom[ok]
    only_e = use_e & ~use_g
    s[only_e] = beta[only_e]
    only_g = use_g & ~use_e
    s[only_g] = gam[only_g]
    return s


def alive_columns(layout: GroupLayout, h: Hyperparameters) -> np.ndarray:
    return effective_variance(layout, h) > 0


def _check_lambda(h: Hyperparameters):
    if not h.lam > 0:
        raise ValueError(f"noise variance must be positive, got {h.lam}")


class _Factors:
    """Shared factorization of the marginal covariance on the active set.

    Chooses between the n x n data-space form (fewer rows than active
    columns) and the column-space form through the posterior precision; both
    expose the same quantities and agree to rounding error.
    """

    def __init__(self, prob: RegressionProblem, h: Hyperparameters, force_path: str | None = None):
        _check_lambda(h)
        self.prob = prob
        self.h = h
        self.s_full = effective_variance(prob.layout, h)
        self.active = self.s_full > 0
        self.Phi_a = prob.Phi[:, self.active]
        self.s_a = self.s_full[self.active]
        self.n = prob.n_rows
        self.ma = int(self.active.sum())
        self.lam = h.lam
        if force_path is None:
            self.path = "direct" if self.n < self.ma else "factored"
        else:
            self.path = force_path
        y = prob.y
        if self.ma == 0:
            self.mu_a = np.zeros(0)
            self._sigma_a = np.zeros((0, 0))
            self.E_y = float(y @ y) / self.lam
            self.logdet = self.n * np.log(self.lam)
            self.trace_delta = self.n / self.lam
            self._dfull = (prob.Phi * prob.Phi).sum(axis=0) / self.lam
            return
        if self.path == "direct":
            K = self.lam * np.eye(self.n) + (self.Phi_a * self.s_a) @ self.Phi_a.T
            cK, low = cho_factor(K, lower=True)
            self._cK = (cK, low)
            Ky = cho_solve(self._cK, y)
            self.mu_a = self.s_a * (self.Phi_a.T @ Ky)
            self.E_y = float(y @ Ky)
            self.logdet = 2.0 * float(np.sum(np.log(np.diag(cK))))
            Linv = solve_triangular(cK, np.eye(self.n), lower=low)
            self.trace_delta = float(np.sum(Linv**2))
            R = cho_solve(self._cK, prob.Phi)
            self._dfull = np.einsum("ij,ij->j", prob.Phi, R)
            self._sigma_a = None
        else:
            gram = self.Phi_a.T @ self.Phi_a
            prec = gram / self.lam
            prec[np.diag_indices(self.ma)] += 1.0 / self.s_a
            cP, low = cho_factor(prec, lower=True)
            self._cP = (cP, low)
            b = self.Phi_a.T @ y
            self.mu_a = cho_solve(self._cP, b) / self.lam
            self.E_y = (float(y @ y) - float(b @ self.mu_a)) / self.lam
            self.logdet = (
                self.n * np.log(self.lam)
                + 2.0 * float(np.sum(np.log(np.diag(cP))))
                + float(np.sum(np.log(self.s_a)))
            )
            sigma_a = cho_solve(self._cP, np.eye(self.ma))
            self._sigma_a = 0.5 * (sigma_a + sigma_a.T)
            self.trace_delta = (self.n - np.sum(sigma_a * gram) / self.lam) / self.lam
            G = self.Phi_a.T @ prob.Phi
            W = solve_triangular(cP, G, lower=low)
            self._dfull = (
                np.einsum("ij,ij->j", prob.Phi, prob.Phi) - np.einsum("ij,ij->j", W, W) / self.lam
            ) / self.lam

    def delta_diag_products(self) -> np.ndarray:
        """diag(Phi' Delta Phi) over all columns, Delta = (lam I + Phi S Phi')^-1."""
        return self._dfull

    def sigma_active(self) -> np.ndarray:
        if self._sigma_a is None:
            SPhT = (self.Phi_a * self.s_a).T
            KinvPhiS = cho_solve(self._cK, SPhT.T)
            sigma = np.diag(self.s_a) - SPhT @ KinvPhiS
            self._sigma_a = 0.5 * (sigma + sigma.T)
        return self._sigma_a


def posterior(prob: RegressionProblem, h: Hyperparameters, _force_path: str | None = None) -> PosteriorGaussian:
    """Gaussian posterior N(mu, Sigma) of the weights on the active set.

    Sigma = [S^-1 + Phi' Phi / lam]^-1 and mu = Sigma Phi' y / lam, both
    embedded with zeros on pruned coordinates.
    """
    fac = _Factors(prob, h, _force_path)
    M = prob.layout.n_columns
    mu = np.zeros(M)
    Sigma = np.zeros((M, M))
    if fac.ma:
        mu[fac.active] = fac.mu_a
        idx = np.where(fac.active)[0]
        Sigma[np.ix_(idx, idx)] = fac.sigma_active()
    out = PosteriorGaussian(mu=mu, Sigma=Sigma)
    if not (np.isfinite(mu).all() and np.isfinite(Sigma).all()):
        raise FloatingPointError("posterior produced non-finite values")
    return out


def prior_logdet(layout: GroupLayout, h: Hyperparameters) -> float:
    """Sum of log(beta_q + gamma_g) over coordinates governed by both priors."""
    use_e, use_g, gidx = _participation(layout, h)
    both = use_e & use_g
    tot = h.beta + h.gamma[gidx]
    keep = both & (tot > 0)
    return float(np.sum(np.log(tot[keep])))


def data_logdet(prob: RegressionProblem, h: Hyperparameters, _force_path: str | None = None) -> float:
    """log det of the marginal covariance lam I + Phi S Phi'."""
    return float(_Factors(prob, h, _force_path).logdet)


def data_fit(prob: RegressionProblem, h: Hyperparameters, _force_path: str | None = None) -> float:
    """y' [lam I + Phi S Phi']^-1 y."""
    return float(_Factors(prob, h, _force_path).E_y)


def u_term(prob: RegressionProblem, h: Hyperparameters, w: np.ndarray) -> float:
    """Jointly convex part: residual over lam plus the prior quadratic.

    Infinite when a pruned coordinate carries a nonzero weight.
    """
    _check_lambda(h)
    w = np.asarray(w, dtype=float).ravel()
    s = effective_variance(prob.layout, h)
    dead = s <= 0
    if np.any(w[dead] != 0):
        return float("inf")
    r = prob.y - prob.Phi @ w
    quad = float(np.sum(w[~dead] ** 2 / s[~dead]))
    return float(r @ r) / h.lam + quad


def v_term(prob: RegressionProblem, h: Hyperparameters) -> float:
    """Concave-part carrier: minus both log-det terms (itself convex)."""
    return -prior_logdet(prob.layout, h) - data_logdet(prob, h)


def eval_L1(prob: RegressionProblem, h: Hyperparameters, w: np.ndarray) -> float:
    return u_term(prob, h, w) - v_term(prob, h)


def eval_L2(prob: RegressionProblem, h: Hyperparameters) -> float:
    fac = _Factors(prob, h)
    return fac.E_y + prior_logdet(prob.layout, h) + fac.logdet


def grad_v(prob: RegressionProblem, h: Hyperparameters, _force_path: str | None = None) -> GradV:
    """Positive reweighting vector g = -grad v at the current hyperparameters.

    Coordinates of dead groups report infinity (their variational penalty is
    unbounded); exempted groups report g_gamma = 0.
    """
    fac = _Factors(prob, h, _force_path)
    lay = prob.layout
    use_e, use_g, gidx = _participation(lay, h)
    d = fac.delta_diag_products()
    beta, gam = h.beta, h.gamma[gidx]

    g_beta = np.zeros(lay.n_columns)
    if np.any(use_e):
        tot = beta + gam
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_tot = np.where(tot > 0, 1.0 / np.where(tot > 0, tot, 1.0), np.inf)
            ratio_g = np.where(tot > 0, gam / np.where(tot > 0, tot, 1.0), 0.0)
        both = use_e & use_g
        g_beta[both] = inv_tot[both] + d[both] * ratio_g[both] ** 2
        only_e = use_e & ~use_g
        g_beta[only_e] = d[only_e]

    g_gamma = np.zeros(lay.n_groups)
    for g in range(lay.n_groups):
        sl = lay.group_slice(g)
        cols = np.arange(sl.start, sl.stop)
        if not use_g[cols[0]]:
            continue
        b = beta[cols]
        gm = h.gamma[g]
        if h.mode == "group_only":
            g_gamma[g] = float(np.sum(d[cols]))
            continue
        tot = b + gm
        if gm <= 0 and np.all(b <= 0):
            g_gamma[g] = np.inf
            continue
        with np.errstate(divide="ignore"):
            term = np.where(tot > 0, 1.0 / np.where(tot > 0, tot, 1.0), np.inf)
        ratio_b = np.where(tot > 0, b / np.where(tot > 0, tot, 1.0), 0.0)
        g_gamma[g] = float(np.sum(term + d[cols] * ratio_b**2))

    return GradV(g_beta=g_beta, g_gamma=g_gamma, g_lambda=float(fac.trace_delta))

"""Brute-force checks of the covariance and KL results at tiny sizes.

Everything here materializes (mn) x (mn) matrices with Kronecker products,
so it is only meant for m, n of a handful. ``vec`` stacks columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .adapter import BayesianAdapter, PosteriorFamily
from .linalg import ORACLE_SIZE_CAP, SizeCapError, as_matrix, kron, orthonormal_complement


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).T.reshape(-1)


@dataclass(frozen=True)
class FullCovariance:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class KlParams:
    sigma_q: float
    sigma_p: float
    n: int
    r: int
    lam: float = 1.0


def _check_cap(size: int) -> None:
    if size > ORACLE_SIZE_CAP:
        raise SizeCapError(f"oracle matrix of size {size} exceeds cap {ORACLE_SIZE_CAP}")


def covariance_from_omega(b_prime, omega) -> np.ndarray:
    """``[I_n (x) B] diag(vec(Omega)^2) [I_n (x) B^T]`` assembled literally."""
    b = as_matrix(b_prime)
    omega = as_matrix(omega)
    m, r = b.shape
    if omega.shape[0] != r:
        raise ValueError(f"omega has {omega.shape[0]} rows, expected {r}")
    n = omega.shape[1]
    _check_cap(m * n)
    left = kron(np.eye(n), b)
    return left @ np.diag(vec(omega) ** 2) @ left.T


def projection_matrix(m: int, n: int, r: int) -> np.ndarray:
    """``I_n (x) diag(I_r, 0_{m-r})``."""
    if not 0 <= r <= m:
        raise ValueError("need 0 <= r <= m")
    _check_cap(m * n)
    block = np.zeros((m, m))
    block[:r, :r] = np.eye(r)
    return kron(np.eye(n), block)


def family_omega(bayes: BayesianAdapter, family: PosteriorFamily) -> np.ndarray:
    family = PosteriorFamily(family)
    if family is PosteriorFamily.LOW_RANK_ISOTROPIC:
        return bayes.omega()
    if family is PosteriorFamily.CONSTANT_STD:
        return np.full(bayes.m_mean.shape, bayes.sigma_q)
    raise ValueError("the full-rank family has no low-rank omega")


def full_covariance(bayes: BayesianAdapter, family: PosteriorFamily, w0=None) -> FullCovariance:
    """Mean and covariance of ``vec(W)`` implied by a Bayesianized adapter."""
    family = PosteriorFamily(family)
    m, n = bayes.shape
    w0 = np.zeros((m, n)) if w0 is None else as_matrix(w0)
    mu = vec(w0 + bayes.b_prime @ bayes.m_mean)
    if family is PosteriorFamily.FULL_RANK_ISOTROPIC:
        _check_cap(m * n)
        return FullCovariance(mu, bayes.sigma_q**2 * np.eye(m * n))
    return FullCovariance(mu, covariance_from_omega(bayes.b_prime, family_omega(bayes, family)))


def left_basis(bayes: BayesianAdapter) -> np.ndarray:
    """Orthogonal m x m matrix whose first r columns are the left singular vectors U."""
    return orthonormal_complement(bayes.b_prime / bayes.d)


def tfb_covariance_residuals(bayes: BayesianAdapter, omega=None) -> dict[str, float]:
    """Max-abs residuals of the low-rank isotropic covariance identity.

    ``coordinate``: assembled covariance vs ``sigma^2 I_n (x) diag(I_r, 0)`` in
    the original coordinates (holds only when U spans the first r axes).
    ``aligned``: the same comparison after rotating into the basis
    ``I_n (x) [U, U_perp]``. ``projector``: assembled covariance vs
    ``sigma^2 I_n (x) U U^T``.
    """
    m, n = bayes.shape
    omega = bayes.omega() if omega is None else omega
    cov = covariance_from_omega(bayes.b_prime, omega)
    s2 = bayes.sigma_q**2
    p = projection_matrix(m, n, bayes.rank)
    q = kron(np.eye(n), left_basis(bayes))
    u = bayes.b_prime / bayes.d
    return {
        "coordinate": float(np.max(np.abs(cov - s2 * p))),
        "aligned": float(np.max(np.abs(q.T @ cov @ q - s2 * p))),
        "projector": float(np.max(np.abs(cov - s2 * kron(np.eye(n), u @ u.T)))),
    }


def gaussian_kl_general(mu_q, sigma_q_mat, mu_p, sigma_p_mat) -> float:
    """KL[q || p] between full-rank Gaussians via Cholesky factors."""
    mu_q = np.asarray(mu_q, dtype=np.float64).reshape(-1)
    mu_p = np.asarray(mu_p, dtype=np.float64).reshape(-1)
    sq = np.atleast_2d(np.asarray(sigma_q_mat, dtype=np.float64))
    sp = np.atleast_2d(np.asarray(sigma_p_mat, dtype=np.float64))
    d = mu_q.size
    try:
        lq = np.linalg.cholesky(sq)
        lp = np.linalg.cholesky(sp)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("covariance is not positive definite on the support") from exc
    logdet_q = 2.0 * np.sum(np.log(np.diag(lq)))
    logdet_p = 2.0 * np.sum(np.log(np.diag(lp)))
    sp_inv_sq = np.linalg.solve(sp, sq)
    diff = mu_q - mu_p
    maha = float(diff @ np.linalg.solve(sp, diff))
    return 0.5 * (logdet_p - logdet_q - d + float(np.trace(sp_inv_sq)) + maha)


def restricted_kl(mu_q, sigma_q_mat, mu_p, sigma_p_mat, projector) -> float:
    """KL after restricting both Gaussians to the range of ``projector``."""
    p = np.asarray(projector, dtype=np.float64)
    if np.count_nonzero(p - np.diag(np.diag(p))) == 0:
        basis = np.eye(p.shape[0])[:, np.diag(p) > 0.5]
    else:
        w, v = np.linalg.eigh(p)
        basis = v[:, w > 0.5]
    return gaussian_kl_general(
        basis.T @ np.asarray(mu_q),
        basis.T @ sigma_q_mat @ basis,
        basis.T @ np.asarray(mu_p),
        basis.T @ sigma_p_mat @ basis,
    )


def kl_lowrank_closed_form(p: KlParams) -> float:
    """``(nr/2) [log sigma_p^2 - 1 - log sigma_q^2 + sigma_q^2 / sigma_p^2]``; +inf at sigma_q = 0."""
    if p.sigma_p <= 0:
        raise ValueError("sigma_p must be positive")
    if p.sigma_q < 0:
        raise ValueError("sigma_q must be non-negative")
    if p.sigma_q == 0:
        return float("inf")
    sq2, sp2 = p.sigma_q**2, p.sigma_p**2
    return 0.5 * p.n * p.r * (np.log(sp2) - 1.0 - np.log(sq2) + sq2 / sp2)


def kl_lowrank_via_general(p: KlParams, m: int | None = None) -> float:
    """The same KL evaluated by assembling both covariances and restricting to the projector's range."""
    m = p.r if m is None else m
    proj = projection_matrix(m, p.n, p.r)
    mu = np.zeros(m * p.n)
    return restricted_kl(mu, p.sigma_q**2 * proj, mu, p.sigma_p**2 * proj, proj)


@dataclass(frozen=True)
class SweepRow:
    lam: float
    argmin_lagrangian: float
    epsilon_tilde: float
    argmax_constrained: float
    grid_step: float


def vi_equivalence_sweep(
    loss: Callable[[np.ndarray], np.ndarray],
    lambda_grid: Sequence[float],
    sigma_p: float,
    n: int,
    r: int,
    sigma_grid: Sequence[float],
) -> list[SweepRow]:
    """Compare the KL-regularized minimizer with the tolerance-constrained maximizer.

    For each ``lam``: ``s_L = argmin loss(s) + lam * KL(s)`` on the grid, then
    ``eps = loss(s_L)`` and the largest grid ``s`` with ``loss(s) <= eps``.
    """
    s = np.asarray(sigma_grid, dtype=np.float64)
    if s.size < 2 or np.any(np.diff(s) <= 0):
        raise ValueError("sigma_grid must be sorted ascending")
    values = np.asarray(loss(s), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("loss is not finite on the grid")
    kl = np.array([kl_lowrank_closed_form(KlParams(float(x), sigma_p, n, r)) for x in s])
    step = float(np.max(np.diff(s)))
    rows = []
    for lam in lambda_grid:
        objective = values if lam == 0 else values + lam * kl
        k = int(np.argmin(objective))
        eps = float(values[k])
        feasible = np.nonzero(values <= eps)[0]
        rows.append(SweepRow(float(lam), float(s[k]), eps, float(s[feasible[-1]]), step))
    return rows

"""The registered oracle checks run by ``tfb-kit verify``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapter import LoraAdapter, PosteriorFamily, bayesianize
from .oracle import (
    KlParams,
    full_covariance,
    kl_lowrank_closed_form,
    kl_lowrank_via_general,
    projection_matrix,
    tfb_covariance_residuals,
    vi_equivalence_sweep,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))


def random_adapter(rng: np.random.Generator, max_m=6, max_n=4, max_r=3) -> LoraAdapter:
    while True:
        m = int(rng.integers(1, max_m + 1))
        n = int(rng.integers(1, max_n + 1))
        r = int(rng.integers(1, min(m, n, max_r) + 1))
        ad = LoraAdapter(rng.standard_normal((m, n)), rng.standard_normal((m, r)), rng.standard_normal((r, n)))
        s = np.linalg.svd(ad.b, compute_uv=False)
        if s[-1] > 1e-3 * s[0]:
            return ad


def check_tfb_covariance(inject_fault: bool = False, count: int = 100, seed: int = 0) -> CheckResult:
    """Covariance of the regrouped family is sigma^2 times the rank-nr projector (basis of U)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(count):
        ad = random_adapter(rng)
        for s in (0.1, 1.0, 3.0):
            bayes = bayesianize(ad, s)
            omega = bayes.omega()
            if inject_fault and k == 0:
                omega = omega.copy()
                omega[0, 0] *= -2.0
            res = tfb_covariance_residuals(bayes, omega)
            worst = max(worst, res["aligned"], res["projector"])
    return CheckResult("tfb_covariance_identity", worst <= 1e-9, f"max_abs_err={worst:.3e}")


def check_projector(seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(50):
        m = int(rng.integers(1, 7))
        n = int(rng.integers(1, 5))
        r = int(rng.integers(0, m + 1))
        p = projection_matrix(m, n, r)
        ok &= bool(np.max(np.abs(p @ p - p)) <= 1e-12)
        ok &= bool(np.trace(p) == n * r)
        if r == m:
            ok &= bool(np.array_equal(p, np.eye(m * n)))
    return CheckResult("projection_operator", ok, "idempotent, trace = n*r, full rank = identity")


def check_kl_agreement(count: int = 200, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, 5))
        r = int(rng.integers(1, 4))
        m = r + int(rng.integers(0, 3))
        p = KlParams(float(rng.uniform(0.05, 3.0)), float(rng.uniform(0.05, 3.0)), n, r)
        closed = kl_lowrank_closed_form(p)
        general = kl_lowrank_via_general(p, m)
        worst = max(worst, abs(closed - general) / max(abs(general), 1e-300))
    at_min = max(abs(kl_lowrank_closed_form(KlParams(s, s, 3, 2))) for s in (0.1, 0.5, 1.0, 2.0))
    ok = worst <= 1e-8 and at_min <= 1e-12
    return CheckResult("kl_closed_form", ok, f"max_rel_err={worst:.3e} kl_at_sigma_p={at_min:.1e}")


def check_sweep() -> CheckResult:
    grid = np.linspace(1e-4, 1.0, 10_000)
    worst = 0.0
    for c in (0.5, 2.0):
        rows = vi_equivalence_sweep(lambda s, c=c: c * s**2, [0.1, 1.0, 10.0], 1.0, 4, 2, grid)
        for row in rows:
            worst = max(worst, abs(row.argmin_lagrangian - row.argmax_constrained) / row.grid_step)
    return CheckResult("lagrangian_constrained_equivalence", worst <= 1.0, f"max_gap_in_grid_steps={worst:.3f}")


def check_regrouping(count: int = 1000, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        ad = random_adapter(rng, 8, 8, 4)
        bayes = bayesianize(ad, 0.1)
        ref = ad.delta
        worst = max(worst, np.max(np.abs(bayes.b_prime @ bayes.m_mean - ref)) / np.max(np.abs(ref)))
    return CheckResult("regrouping_equivalence", worst <= 1e-10, f"max_rel_err={worst:.3e}")


def reparameterize(ad: LoraAdapter, rmat: np.ndarray) -> LoraAdapter:
    return LoraAdapter(ad.w0, ad.b @ rmat, np.linalg.solve(rmat, ad.a))


def parameterization_gaps(count: int = 50, seed: int = 4, sigma: float = 0.7) -> tuple[float, float]:
    """(max Final-family covariance gap, min C-STD covariance gap) over random re-parameterizations."""
    rng = np.random.default_rng(seed)
    final_gap, cstd_gap = 0.0, np.inf
    for _ in range(count):
        ad = random_adapter(rng)
        r = ad.b.shape[1]
        rmat = rng.standard_normal((r, r)) + 2.0 * np.eye(r)
        twin = reparameterize(ad, rmat)
        b1, b2 = bayesianize(ad, sigma), bayesianize(twin, sigma)
        fam = PosteriorFamily.LOW_RANK_ISOTROPIC
        final_gap = max(final_gap, np.max(np.abs(full_covariance(b1, fam).sigma - full_covariance(b2, fam).sigma)))
        fam = PosteriorFamily.CONSTANT_STD
        cstd_gap = min(cstd_gap, np.max(np.abs(full_covariance(b1, fam).sigma - full_covariance(b2, fam).sigma)))
    return float(final_gap), float(cstd_gap)


def check_parameterization() -> CheckResult:
    final_gap, cstd_gap = parameterization_gaps()
    ok = final_gap <= 1e-8 and cstd_gap > 1e-3
    return CheckResult(
        "parameterization_independence", ok, f"final_max_gap={final_gap:.3e} cstd_min_gap={cstd_gap:.3e}"
    )


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "tfb_covariance_identity": check_tfb_covariance,
    "projection_operator": check_projector,
    "kl_closed_form": check_kl_agreement,
    "lagrangian_constrained_equivalence": check_sweep,
    "regrouping_equivalence": check_regrouping,
    "parameterization_independence": check_parameterization,
}


def run_all(inject_fault: bool = False) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        results.append(fn(inject_fault=inject_fault) if name == "tfb_covariance_identity" else fn())
    return results

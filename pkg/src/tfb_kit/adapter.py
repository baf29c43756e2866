"""Regrouping a trained low-rank adapter into its Bayesianized form.

Given ``{B, A}`` the adapter is rewritten as ``B' = U diag(d)`` and
``M = V^T A`` (same product), and a single ``sigma_q`` fixes the
standard deviation of every entry of ``A'``: row ``i`` has std
``sigma_q / d_i``. Only ``d`` and ``sigma_q`` are stored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import ndtri

from .linalg import as_matrix, compact_svd


class PosteriorFamily(str, Enum):
    LOW_RANK_ISOTROPIC = "final"  # the TFB family
    FULL_RANK_ISOTROPIC = "fr"
    CONSTANT_STD = "c-std"


@dataclass(frozen=True)
class LoraAdapter:
    w0: np.ndarray  # m x n, frozen
    b: np.ndarray  # m x r
    a: np.ndarray  # r x n

    def __post_init__(self):
        w0, b, a = as_matrix(self.w0), as_matrix(self.b), as_matrix(self.a)
        m, n = w0.shape
        r = b.shape[1]
        if b.shape[0] != m or a.shape != (r, n):
            raise ValueError(f"inconsistent adapter shapes w0={w0.shape} b={b.shape} a={a.shape}")
        if r > min(m, n):
            raise ValueError(f"rank {r} exceeds min(m, n) = {min(m, n)}")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def delta(self) -> np.ndarray:
        return self.b @ self.a


@dataclass(frozen=True)
class BayesianAdapter:
    b_prime: np.ndarray  # m x r, U diag(d)
    m_mean: np.ndarray  # r x n, V^T A
    d: np.ndarray  # r singular values of B
    sigma_q: float

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        if d.ndim != 1 or np.any(d <= 0):
            raise ValueError("singular values must be a strictly positive vector")
        if self.sigma_q < 0 or not np.isfinite(self.sigma_q):
            raise ValueError(f"sigma_q must be finite and non-negative, got {self.sigma_q}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "sigma_q", float(self.sigma_q))

    @property
    def shape(self) -> tuple[int, int]:
        return self.b_prime.shape[0], self.m_mean.shape[1]

    @property
    def rank(self) -> int:
        return self.d.shape[0]

    def row_std(self) -> np.ndarray:
        """Per-row standard deviation of ``A'`` (length r)."""
        return self.sigma_q / self.d

    def omega(self) -> np.ndarray:
        """Materialize the full r x n standard-deviation matrix (oracle/debug use)."""
        return np.repeat(self.row_std()[:, None], self.m_mean.shape[1], axis=1)

    def with_sigma(self, sigma_q: float) -> "BayesianAdapter":
        return dataclasses.replace(self, sigma_q=sigma_q)


def bayesianize(adapter: LoraAdapter, sigma_q: float) -> BayesianAdapter:
    """Regroup ``{B, A}`` via the compact SVD of ``B``. ``W0`` is not touched."""
    svd = compact_svd(adapter.b)
    return BayesianAdapter(
        b_prime=svd.u * svd.d,
        m_mean=svd.v.T @ adapter.a,
        d=svd.d,
        sigma_q=sigma_q,
    )


_U53 = float(2**53)


def standard_normal(seed: int, layer: int, sample: int, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse-CDF standard normals from a PCG64 stream keyed by (seed, layer, sample).

    Entries are filled in row-major order, so entry ``k`` of the stream always
    lands at flat index ``k``.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(layer), int(sample)])
    gen = np.random.Generator(np.random.PCG64(ss))
    count = int(np.prod(shape))
    bits = gen.integers(0, 2**53, size=count, dtype=np.uint64)
    u = (bits.astype(np.float64) + 0.5) / _U53  # strictly inside (0, 1)
    return ndtri(u).reshape(shape)


def sample_noise(
    bayes: BayesianAdapter,
    family: PosteriorFamily,
    rng_seed: int,
    layer: int = 0,
    sample: int = 0,
) -> np.ndarray:
    """Draw one noise realization.

    Low-rank families return ``E`` (r x n) to be added to ``M``; the
    full-rank family returns ``G`` (m x n) to be added to the weight itself.
    """
    family = PosteriorFamily(family)
    m, n = bayes.shape
    if family is PosteriorFamily.FULL_RANK_ISOTROPIC:
        return bayes.sigma_q * standard_normal(rng_seed, layer, sample, (m, n))
    z = standard_normal(rng_seed, layer, sample, (bayes.rank, n))
    if family is PosteriorFamily.LOW_RANK_ISOTROPIC:
        return bayes.row_std()[:, None] * z
    return bayes.sigma_q * z


def realize_weight(
    bayes: BayesianAdapter,
    w0: np.ndarray,
    family: PosteriorFamily,
    rng_seed: int,
    layer: int = 0,
    sample: int = 0,
) -> np.ndarray:
    family = PosteriorFamily(family)
    noise = sample_noise(bayes, family, rng_seed, layer, sample)
    if family is PosteriorFamily.FULL_RANK_ISOTROPIC:
        return w0 + bayes.b_prime @ bayes.m_mean + noise
    return w0 + bayes.b_prime @ (bayes.m_mean + noise)


@dataclass(frozen=True)
class LayerNoise:
    """Noise for one adapted layer: ``lowrank`` is added to A, ``full`` to the weight."""

    lowrank: np.ndarray | None = None
    full: np.ndarray | None = None


@dataclass(frozen=True)
class Posterior:
    """Bayesianized adapters keyed by network layer index, plus the family in use."""

    adapters: dict[int, BayesianAdapter]
    family: PosteriorFamily = PosteriorFamily.LOW_RANK_ISOTROPIC
    meta: dict = field(default_factory=dict)

    @property
    def sigma_q(self) -> float:
        sigmas = {ad.sigma_q for ad in self.adapters.values()}
        if len(sigmas) != 1:
            raise ValueError("adapters do not share a single sigma_q")
        return sigmas.pop()

    def with_sigma(self, sigma_q: float) -> "Posterior":
        return dataclasses.replace(
            self, adapters={i: ad.with_sigma(sigma_q) for i, ad in self.adapters.items()}
        )

    def with_family(self, family: PosteriorFamily) -> "Posterior":
        return dataclasses.replace(self, family=PosteriorFamily(family))

    def noise_plan(self, seed: int, sample: int, layers=None) -> dict[int, LayerNoise]:
        """One joint draw for ``sample``; ``layers`` restricts which layers get noise."""
        keys = sorted(self.adapters) if layers is None else sorted(layers)
        plan = {}
        for i in keys:
            noise = sample_noise(self.adapters[i], self.family, seed, layer=i, sample=sample)
            if self.family is PosteriorFamily.FULL_RANK_ISOTROPIC:
                plan[i] = LayerNoise(full=noise)
            else:
                plan[i] = LayerNoise(lowrank=noise)
        return plan

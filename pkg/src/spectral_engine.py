"""Spectral measures of delta_1 and their Fourier transforms, exact and certified.

Certification rests on the prefix-freezing bound: the order-m Dyson term of
<delta_1, exp(-itH) delta_1> only involves matrix entries among sites 1..m+1. A Dirichlet box of
size N shares those entries with the half-line operator for every m <= N-1, so the box value
differs from the half-line value by at most

    tail_bound(N, |lambda|, t) = 2 * sum_{m >= N} ((2 + |lambda|) |t|)^m / m!

(the norm of Delta_lambda is at most 2 + |lambda| on both). That radius is what
fourier_certified reports.
"""

from __future__ import annotations

import functools
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal, eigvalsh_tridiagonal
from scipy.special import gammaln, logsumexp

from src.operator_model import FiniteOperator, Potential, PotentialError, truncate

logger = logging.getLogger(__name__)

DEFAULT_M_CAP = 8.0
DEFAULT_MATRIX_CEILING = 20000
# Extra exact terms summed past the geometric cutoff before the 2*term majorant takes over.
_TAIL_GUARD_TERMS = 60
_LOG_FLOAT_MAX = math.log(sys.float_info.max)


class EigensolverError(RuntimeError):
    def __init__(self, size: int, detail: str, driver: str = "stemr"):
        super().__init__(f"eigensolver failed: size={size} driver={driver} detail={detail}")
        self.size = size
        self.driver = driver


class BoxCeilingError(ValueError):
    def __init__(self, required: int, ceiling: int):
        super().__init__(
            f"certified box needs N_box={required} sites, above the matrix ceiling {ceiling}"
        )
        self.required = required
        self.ceiling = ceiling


def _cache_enabled() -> bool:
    return (os.getenv("SPECTRAL_CACHE", "1") or "1").strip().lower() not in {"0", "false", "no"}


@dataclass(frozen=True)
class SpectralMeasure:
    eigenvalues: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        for name in ("eigenvalues", "weights"):
            arr = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.eigenvalues.size != self.weights.size:
            raise ValueError("eigenvalues and weights must have the same length")

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)

    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    def first_moment(self) -> float:
        return float(np.dot(self.weights, self.eigenvalues))


@dataclass(frozen=True)
class CertifiedAmplitude:
    value: complex
    error_radius: float
    t: float = 0.0
    box: int = 0

    @property
    def modulus(self) -> float:
        return abs(self.value)

    def lower_modulus(self) -> float:
        """Certified lower bound on the true |mu_hat(t)|."""
        return abs(self.value) - self.error_radius


def eigendecompose(op: FiniteOperator) -> SpectralMeasure:
    """Full decomposition; weight_j = (first component of eigenvector j)^2."""
    n = op.size
    if n == 1:
        return SpectralMeasure(op.diagonal.copy(), np.ones(1))
    try:
        evals, evecs = eigh_tridiagonal(op.diagonal, op.offdiagonal, eigvals_only=False)
    except (LinAlgError, ValueError) as e:
        raise EigensolverError(n, str(e)) from e
    if not np.all(np.isfinite(evals)):
        raise EigensolverError(n, "non-finite eigenvalues")
    return SpectralMeasure(evals, evecs[0, :] ** 2)


def eigenvalues(op: FiniteOperator) -> np.ndarray:
    """Ascending eigenvalues only (no eigenvectors), for large boxes."""
    if op.size == 1:
        return op.diagonal.copy()
    try:
        return eigvalsh_tridiagonal(op.diagonal, op.offdiagonal)
    except (LinAlgError, ValueError) as e:
        raise EigensolverError(op.size, str(e), driver="stebz") from e


@functools.lru_cache(maxsize=4096)
def _cached_measure(V: Potential, lam: float, box: int) -> SpectralMeasure:
    return eigendecompose(truncate(V, lam, box))


def spectral_measure(V: Potential, lam: float, box: int) -> SpectralMeasure:
    """Measure of truncate(V, lam, box), cached on (V, lam, box) unless SPECTRAL_CACHE=0."""
    if _cache_enabled():
        return _cached_measure(V, float(lam), int(box))
    return eigendecompose(truncate(V, lam, box))


def clear_cache() -> None:
    _cached_measure.cache_clear()


def fourier(sm: SpectralMeasure, t: float) -> complex:
    """sum_j w_j exp(-i t E_j)."""
    return complex(np.dot(sm.weights, np.exp(-1j * float(t) * sm.eigenvalues)))


def fourier_trace(sm: SpectralMeasure, times: Sequence[float] | np.ndarray) -> np.ndarray:
    """fourier() at many times at once; returns a complex array shaped like `times`."""
    ts = np.asarray(times, dtype=np.float64)
    phases = np.exp(-1j * np.multiply.outer(ts.reshape(-1), sm.eigenvalues))
    return (phases @ sm.weights).reshape(ts.shape)


def _log_series_tail(N: int, x: float) -> float:
    """log of an upper bound on sum_{m >= N} x^m / m!, x > 0.

    Terms are exact up to m* = max(N, ceil(2x)) + guard; past m* each ratio x/(m+1) is
    at most 1/2, so the remainder is majorized by 2 * term_{m*}.
    """
    m_star = max(N, math.ceil(2.0 * x)) + _TAIL_GUARD_TERMS
    m = np.arange(N, m_star + 1, dtype=np.float64)
    log_terms = m * math.log(x) - gammaln(m + 1.0)
    scale = np.ones_like(log_terms)
    scale[-1] = 2.0
    return float(logsumexp(log_terms, b=scale))


def series_tail(N: int, x: float) -> float:
    """sum_{m >= N} x^m / m! (certified upper bound, inf when it exceeds float range)."""
    if N < 0:
        raise ValueError(f"N must be >= 0, got {N}")
    x = abs(float(x))
    if x == 0.0:
        return 1.0 if N == 0 else 0.0
    log_total = _log_series_tail(int(N), x)
    if log_total >= _LOG_FLOAT_MAX:
        return math.inf
    return math.exp(log_total)


def tail_bound(N: int, M: float, t: float) -> float:
    """2 * sum_{m >= N} ((2 + M)|t|)^m / m!; monotone decreasing in N, increasing in M and |t|."""
    tail = series_tail(N, (2.0 + abs(float(M))) * abs(float(t)))
    return 2.0 * tail


def min_prefix(tol: float, M: float, T: float) -> int:
    """Smallest N with tail_bound(N, M, T) <= tol; valid for every |t| <= T."""
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if tail_bound(0, M, T) <= tol:
        return 0
    lo, hi = 0, 1
    while tail_bound(hi, M, T) > tol:
        lo, hi = hi, hi * 2
    # tail_bound(lo) > tol >= tail_bound(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail_bound(mid, M, T) <= tol:
            hi = mid
        else:
            lo = mid
    return hi


def lambda_lipschitz(t: float, dlam: float) -> float:
    """Bound on |mu_hat_lambda(t) - mu_hat_lambda'(t)| for |lambda - lambda'| <= dlam."""
    return abs(float(t)) * abs(float(dlam))


def time_lipschitz(sm: SpectralMeasure) -> float:
    """sum_j w_j |E_j|, a bound on |d/dt mu_hat(t)|."""
    return float(np.dot(sm.weights, np.abs(sm.eigenvalues)))


def certified_box(
    V: Potential,
    lam: float,
    t_max: float,
    tol: float,
    *,
    ceiling: int | None = None,
) -> int:
    """N_box = max(min_prefix(tol, |lam|, t_max), last barrier site + 1)."""
    ceiling = ceiling if ceiling is not None else DEFAULT_MATRIX_CEILING
    n_box = max(min_prefix(tol, abs(lam), abs(t_max)), V.last_site + 1, 1)
    if n_box > ceiling:
        raise BoxCeilingError(n_box, ceiling)
    return n_box


def _check_certifiable(V: Potential, lam: float, m_cap: float | None) -> None:
    m_cap = m_cap if m_cap is not None else DEFAULT_M_CAP
    if abs(lam) > m_cap:
        raise ValueError(f"|lambda|={abs(lam)} exceeds M_cap={m_cap}")
    if not V.is_finite():
        raise PotentialError("certified evaluation needs a finite-valued potential")


def certified_trace(
    V: Potential,
    lam: float,
    times: Sequence[float] | np.ndarray,
    tol: float,
    *,
    m_cap: float | None = None,
    ceiling: int | None = None,
) -> List[CertifiedAmplitude]:
    """fourier_certified at several times, sharing one box sized for the largest |t|."""
    ts = [float(t) for t in np.asarray(times, dtype=np.float64).reshape(-1)]
    if not ts:
        return []
    _check_certifiable(V, lam, m_cap)
    t_max = max(abs(t) for t in ts)
    n_box = certified_box(V, lam, t_max, tol, ceiling=ceiling)
    values = fourier_trace(spectral_measure(V, lam, n_box), ts)
    return [
        CertifiedAmplitude(complex(v), tail_bound(n_box, abs(lam), t), t=t, box=n_box)
        for t, v in zip(ts, values)
    ]


def fourier_certified(
    V: Potential,
    lam: float,
    t: float,
    tol: float,
    *,
    m_cap: float | None = None,
    ceiling: int | None = None,
) -> CertifiedAmplitude:
    return certified_trace(V, lam, [t], tol, m_cap=m_cap, ceiling=ceiling)[0]

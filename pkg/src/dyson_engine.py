"""Time-ordered (Dyson) expansion of <delta_1, exp(-itH) delta_1> on a finite box.

Splits H = V + Delta_lambda with T(t) = exp(-itV) diagonal and B = -i Delta_lambda bounded, and
runs the recursion S_{n+1}(t) = int_0^t T(t-s) B S_n(s) ds on columns S_n(s) delta_1 over a shared
uniform grid (composite trapezoid). In the interaction picture phi_n(s) = exp(isV) psi_n(s) the
recursion is a cumulative integral, so each order costs one pass over the grid.

This is a test oracle for the locality and tail claims behind certification; production
amplitudes come from src.spectral_engine.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from src.operator_model import Potential, truncate
from src.spectral_engine import series_tail

logger = logging.getLogger(__name__)

DEFAULT_TAIL_THRESHOLD = 1e-6


class DysonTailError(ValueError):
    def __init__(self, tail: float, threshold: float, order_cap: int):
        super().__init__(
            f"analytic Dyson tail {tail:.3e} at order_cap={order_cap} exceeds {threshold:.1e}; "
            "raise order_cap or shrink |t|"
        )
        self.tail = tail
        self.threshold = threshold


@dataclass(frozen=True)
class DysonConfig:
    order_cap: int
    quad_points: int
    t: float
    lam: float
    quad_target: float = 1e-8
    max_refinements: int = 10
    tail_threshold: float = DEFAULT_TAIL_THRESHOLD

    def __post_init__(self) -> None:
        if self.order_cap < 1:
            raise ValueError(f"order_cap must be >= 1, got {self.order_cap}")
        if self.quad_points < 2:
            raise ValueError(f"quad_points must be >= 2, got {self.quad_points}")


@dataclass(frozen=True)
class DysonResult:
    value: complex
    terms: Tuple[complex, ...] = field(repr=False)
    tail_bound: float = 0.0
    quad_tolerance: float = 0.0
    grid_points: int = 0


def dyson_tail(order_cap: int, lam: float, t: float) -> float:
    """sum_{m > order_cap} ((2 + |lam|)|t|)^m / m!, the norm bound on the dropped orders."""
    return series_tail(order_cap + 1, (2.0 + abs(lam)) * abs(t))


def dyson_term_support(m: int) -> int:
    """Largest site whose potential value can reach the order-m term."""
    if m < 0:
        raise ValueError(f"order must be >= 0, got {m}")
    return m + 1


def _apply_laplacian(psi: np.ndarray, lam: float) -> np.ndarray:
    out = np.zeros_like(psi)
    out[:, :-1] += psi[:, 1:]
    out[:, 1:] += psi[:, :-1]
    out[:, 0] += lam * psi[:, 0]
    return out


def dyson_terms(V: Potential, cfg: DysonConfig, box: int, grid_points: int) -> np.ndarray:
    """Orders 0..order_cap of <delta_1, S_m(t) delta_1> on a fixed grid of `grid_points` nodes."""
    terms = np.zeros(cfg.order_cap + 1, dtype=np.complex128)
    if cfg.t == 0.0:
        terms[0] = 1.0
        return terms
    op = truncate(V, cfg.lam, box)
    pot = np.array(op.diagonal, dtype=np.float64)
    pot[0] -= cfg.lam
    s = np.linspace(0.0, cfg.t, grid_points)
    phase = np.exp(-1j * np.multiply.outer(s, pot))
    psi = np.zeros((grid_points, box), dtype=np.complex128)
    psi[:, 0] = phase[:, 0]
    terms[0] = psi[-1, 0]
    for n in range(cfg.order_cap):
        integrand = np.conj(phase) * (-1j * _apply_laplacian(psi, cfg.lam))
        phi = cumulative_trapezoid(integrand, s, axis=0, initial=0)
        psi = phase * phi
        terms[n + 1] = psi[-1, 0]
    return terms


def dyson_amplitude(V: Potential, cfg: DysonConfig, box: int) -> DysonResult:
    """Sum of orders 0..order_cap with grid-halving refinement and the analytic tail bound."""
    tail = dyson_tail(cfg.order_cap, cfg.lam, cfg.t)
    if tail > cfg.tail_threshold:
        raise DysonTailError(tail, cfg.tail_threshold, cfg.order_cap)
    if cfg.t == 0.0:
        terms = dyson_terms(V, cfg, box, cfg.quad_points)
        return DysonResult(complex(terms.sum()), tuple(complex(x) for x in terms), tail, 0.0, 1)

    points = cfg.quad_points
    terms = dyson_terms(V, cfg, box, points)
    total = complex(terms.sum())
    quad_tol = float("inf")
    for _ in range(max(1, cfg.max_refinements)):
        # halving the step keeps every previous node
        points = 2 * points - 1
        finer = dyson_terms(V, cfg, box, points)
        finer_total = complex(finer.sum())
        quad_tol = abs(finer_total - total)
        terms, total = finer, finer_total
        if quad_tol <= cfg.quad_target:
            break
    logger.debug(
        "dyson_engine: t=%s lam=%s box=%d points=%d quad_tol=%.3e tail=%.3e",
        cfg.t,
        cfg.lam,
        box,
        points,
        quad_tol,
        tail,
    )
    return DysonResult(total, tuple(complex(x) for x in terms), tail, quad_tol, points)

"""Sparse half-line potentials and their finite tridiagonal restrictions.

A potential is stored as a short list of (site, height) barriers; every other site carries 0.
Site 1 is reserved for the rank-one coupling lambda * <delta_1, .> delta_1, which lands on the
(1,1) entry of every matrix built here. Off-diagonals are always 1 (Dirichlet Laplacian).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class PotentialError(ValueError):
    """Raised for malformed barrier lists or operators that cannot be built from them."""


class Marker(enum.Enum):
    """Tag for a decoupling barrier. Never converted to a float."""

    INFINITE = "inf"


Height = float | Marker
Barrier = Tuple[int, Height]


def is_infinite(height: Height) -> bool:
    return height is Marker.INFINITE


def _check_barriers(barriers: Sequence[Barrier]) -> None:
    prev = 1
    for idx, (site, height) in enumerate(barriers):
        if isinstance(site, bool) or not isinstance(site, (int, np.integer)):
            raise PotentialError(f"barrier {idx}: site must be an integer, got {site!r}")
        if site < 2:
            raise PotentialError(f"barrier {idx}: site {site} < 2 (site 1 carries the coupling)")
        if site <= prev:
            raise PotentialError(f"barrier {idx}: sites must increase strictly ({prev} -> {site})")
        prev = site
        if is_infinite(height):
            if idx != len(barriers) - 1:
                raise PotentialError(f"barrier {idx}: infinite marker allowed on the last barrier")
            continue
        if not isinstance(height, (int, float, np.floating)) or isinstance(height, bool):
            raise PotentialError(f"barrier {idx}: height must be real or Marker.INFINITE")
        if not math.isfinite(height) or height <= 0:
            raise PotentialError(f"barrier {idx}: height must be finite and > 0, got {height}")


@dataclass(frozen=True)
class Potential:
    """Finitely many barriers on the half-line, zero elsewhere.

    Hashable, so it doubles as the fingerprint for the spectral cache.
    """

    barriers: Tuple[Barrier, ...] = ()

    def value_at(self, site: int) -> Height:
        for s, h in self.barriers:
            if s == site:
                return h
            if s > site:
                break
        return 0.0

    @property
    def sites(self) -> Tuple[int, ...]:
        return tuple(s for s, _ in self.barriers)

    @property
    def last_site(self) -> int:
        return self.barriers[-1][0] if self.barriers else 1

    @property
    def infinite_site(self) -> int | None:
        if self.barriers and is_infinite(self.barriers[-1][1]):
            return self.barriers[-1][0]
        return None

    def is_finite(self) -> bool:
        return self.infinite_site is None

    def max_height(self) -> float:
        finite = [float(h) for _, h in self.barriers if not is_infinite(h)]
        return max(finite, default=0.0)

    def barriers_up_to(self, site: int) -> int:
        return sum(1 for s in self.sites if s <= site)

    def with_barrier(self, site: int, height: Height) -> "Potential":
        return make_potential(list(self.barriers) + [(site, height)])


@dataclass(frozen=True)
class FiniteOperator:
    """Dirichlet restriction of Delta + lambda*B + V to sites 1..size."""

    diagonal: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        diag = np.array(self.diagonal, dtype=np.float64).reshape(-1)
        if diag.size < 1:
            raise PotentialError("operator must have at least one site")
        diag.setflags(write=False)
        object.__setattr__(self, "diagonal", diag)

    @property
    def size(self) -> int:
        return int(self.diagonal.size)

    @property
    def offdiagonal(self) -> np.ndarray:
        return np.ones(self.size - 1, dtype=np.float64)

    def dense(self) -> np.ndarray:
        n = self.size
        mat = np.diag(self.diagonal.astype(np.float64))
        if n > 1:
            idx = np.arange(n - 1)
            mat[idx, idx + 1] = 1.0
            mat[idx + 1, idx] = 1.0
        return mat

    def gershgorin_radius(self) -> float:
        """Every eigenvalue lies in [-r, r]."""
        return 2.0 + float(np.max(np.abs(self.diagonal)))


def make_potential(barriers: Iterable[Barrier] = ()) -> Potential:
    items: list[Barrier] = []
    for site, height in barriers:
        h: Height = height if is_infinite(height) else float(height)  # type: ignore[arg-type]
        items.append((int(site), h))
    _check_barriers(items)
    return Potential(tuple(items))


def zero_potential() -> Potential:
    return Potential(())


def _diagonal(V: Potential, lam: float, box: int) -> np.ndarray:
    diag = np.zeros(box, dtype=np.float64)
    for site, height in V.barriers:
        if site > box:
            break
        diag[site - 1] = float(height)  # type: ignore[arg-type]
    diag[0] += lam
    return diag


def truncate(V: Potential, lam: float, box: int) -> FiniteOperator:
    """Restriction of H_{V,lambda} to {1, ..., box} with Dirichlet boundary."""
    if box < 1:
        raise PotentialError(f"box must be >= 1, got {box}")
    inf_site = V.infinite_site
    if inf_site is not None and inf_site <= box:
        raise PotentialError(
            f"infinite barrier at site {inf_site} lies inside box {box}; use decouple_at"
        )
    return FiniteOperator(_diagonal(V, float(lam), box))


def decouple_at(V: Potential, lam: float, n0: int) -> FiniteOperator:
    """Block {1, ..., n0-1} cut off by an infinite barrier at n0.

    Its delta_1 spectral measure is exactly mu_{V,lambda} for V(n0) = inf; everything at or past
    n0 is irrelevant, so V only has to be finite below n0.
    """
    if n0 < 2:
        raise PotentialError(f"decoupling site must be >= 2, got {n0} (delta_1 would vanish)")
    for site, height in V.barriers:
        if site >= n0:
            break
        if is_infinite(height):
            raise PotentialError(f"infinite barrier at site {site} below decoupling site {n0}")
    return FiniteOperator(_diagonal(V, float(lam), n0 - 1))

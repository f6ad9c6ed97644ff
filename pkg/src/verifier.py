"""Audits of a finished construction state.

Every audit is a pure function of (state, settings) and returns an AuditReport; a failing audit
never raises. Reports carry a direction: "min" audits pass when the worst case stays at or above
the threshold, "max" audits when it stays at or below.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from src.constructor import ConstructionState, lambda_grid, stage_potential
from src.operator_model import Potential, decouple_at, is_infinite, truncate
from src.spectral_engine import (
    DEFAULT_M_CAP,
    DEFAULT_MATRIX_CEILING,
    certified_trace,
    eigendecompose,
    eigenvalues,
    fourier_trace,
    tail_bound,
)

logger = logging.getLogger(__name__)

AUDIT_ORDER = ("witnesses", "freeze", "spectrum", "decoupling")
DECOUPLING_TOLERANCE = 1e-12
# Two eigensolver runs on different boxes agree only to a few ulps of |mu_hat| <= 1.
FREEZE_ROUNDOFF = 1024 * float(np.finfo(np.float64).eps)
MAX_DETAIL_ROWS = 200


@dataclass(frozen=True)
class AuditSettings:
    grid_step: float | None = None
    certify_tol: float = 1e-6
    freeze_tol: float = 1e-10
    spectrum_boxes: Tuple[int, ...] = (500, 1000, 2000, 4000)
    spectrum_lams: Tuple[float, ...] = (0.0, 1.0)
    spectrum_delta: float = 0.05
    spectrum_inner: float = 1.9
    spectrum_gap: float = 0.1
    spot_seed: int | None = None
    spot_samples: int = 64
    m_cap: float = DEFAULT_M_CAP
    matrix_ceiling: int = DEFAULT_MATRIX_CEILING


@dataclass
class AuditReport:
    name: str
    samples: int
    worst_case: float
    threshold: float
    passed: bool
    direction: str = "max"
    details: List[Dict[str, Any]] = field(default_factory=list)
    note: str = ""
    seed: int | None = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "samples": self.samples,
            "worst_case": self.worst_case,
            "threshold": self.threshold,
            "pass": self.passed,
            "direction": self.direction,
            "details": self.details,
            "note": self.note,
            "seed": self.seed,
        }


def _row(inputs: Dict[str, Any], measured: float, bound: float, **extra: Any) -> Dict[str, Any]:
    row: Dict[str, Any] = {"input": inputs, "measured": float(measured), "bound": float(bound)}
    row.update(extra)
    return row


def _finish(
    name: str,
    samples: int,
    worst: float,
    threshold: float,
    direction: str,
    failures: List[Dict[str, Any]],
    info: List[Dict[str, Any]] | None = None,
    note: str = "",
    seed: int | None = None,
    passed: bool | None = None,
) -> AuditReport:
    if passed is None:
        passed = worst >= threshold if direction == "min" else worst <= threshold
    details = list(info or [])
    if not passed:
        details.extend(failures[:MAX_DETAIL_ROWS])
        if not failures:
            details.append(_row({"audit": name}, worst, threshold, note="worst case out of bound"))
    report = AuditReport(name, samples, worst, threshold, passed, direction, details, note, seed)
    log = logger.info if passed else logger.warning
    log(
        "verifier: %s pass=%s worst=%.6g threshold=%.6g samples=%d",
        name,
        passed,
        worst,
        threshold,
        samples,
    )
    return report


def _grid_step(state: ConstructionState, settings: AuditSettings) -> float:
    if settings.grid_step is not None:
        return float(settings.grid_step)
    return state.epsilon / (2.0 * state.t_max())


def audit_witnesses(
    state: ConstructionState, settings: AuditSettings | None = None
) -> AuditReport:
    """Every lambda on the stage-j grid of [-j, j] has a stage-j time with certified
    |mu_hat_V(t)| >= 1/2 - 2 eps on the final potential."""
    s = settings or AuditSettings()
    threshold = 0.5 - 2.0 * state.epsilon
    V = state.potential
    step = _grid_step(state, s)
    rng = np.random.default_rng(s.spot_seed) if s.spot_seed is not None else None
    worst = math.inf
    samples = 0
    failures: List[Dict[str, Any]] = []
    info: List[Dict[str, Any]] = []
    for rec in state.stages:
        M = float(rec.j)
        if step >= 2.0 * M:
            info.append(_row({"stage": rec.j}, step, 2.0 * M, note="degenerate grid: endpoints"))
        lams = lambda_grid(M, step)
        if rng is not None:
            lams = np.concatenate([lams, rng.uniform(-M, M, s.spot_samples)])
        times = rec.times
        for lam in lams:
            amps = certified_trace(
                V, float(lam), times, s.certify_tol, m_cap=s.m_cap, ceiling=s.matrix_ceiling
            )
            best = max(amps, key=lambda a: a.lower_modulus())
            score = best.lower_modulus()
            samples += 1
            worst = min(worst, score)
            if score < threshold:
                failures.append(
                    _row(
                        {"stage": rec.j, "lambda": float(lam), "t": best.t},
                        score,
                        threshold,
                        error_radius=best.error_radius,
                    )
                )
    return _finish(
        "witnesses", samples, worst, threshold, "min", failures, info, seed=s.spot_seed
    )


def audit_freeze(state: ConstructionState, settings: AuditSettings | None = None) -> AuditReport:
    """|mu_hat_{V^(J)} - mu_hat_{V^(j)}| < eps and <= tail_bound(N_{j+1}, j, t) on
    T_1 u ... u T_j for every earlier stage j. Scored as measured/bound against 1."""
    s = settings or AuditSettings()
    eps = state.epsilon
    if state.J < 2:
        note = "fewer than two stages: nothing to compare"
        return _finish("freeze", 0, 0.0, 1.0, "max", [], [_row({}, 0.0, 1.0, note=note)])
    step = _grid_step(state, s)
    V_final = state.potential
    worst = 0.0
    samples = 0
    failures: List[Dict[str, Any]] = []
    for rec in state.stages[:-1]:
        j = rec.j
        V_j = stage_potential(state, j)
        times = state.times_through(j)
        for lam in lambda_grid(float(j), step):
            lam = float(lam)
            late, early = (
                certified_trace(
                    W, lam, times, s.freeze_tol, m_cap=s.m_cap, ceiling=s.matrix_ceiling
                )
                for W in (V_final, V_j)
            )
            for a, b in zip(late, early):
                measured = abs(a.value - b.value)
                tail = tail_bound(rec.freeze_N_next, j, a.t)
                bound = tail + a.error_radius + b.error_radius + FREEZE_ROUNDOFF
                ratio = max(measured / bound, measured / eps)
                samples += 1
                worst = max(worst, ratio)
                # eps side is strict, tail side is not
                if measured >= eps or measured > bound:
                    failures.append(
                        _row(
                            {"stage": j, "lambda": lam, "t": a.t},
                            measured,
                            min(eps, bound),
                            tail=tail,
                            roundoff=FREEZE_ROUNDOFF,
                        )
                    )
    return _finish(
        "freeze",
        samples,
        worst,
        1.0,
        "max",
        failures,
        note=(
            f"bound per row: min(eps, tail + error radii + {FREEZE_ROUNDOFF:.3g} roundoff); "
            "the eps comparison is strict"
        ),
        passed=not failures,
    )


def _max_inner_gap(evals: np.ndarray, inner: float) -> float:
    inside = evals[np.abs(evals) <= inner]
    if inside.size < 2:
        return math.inf
    return float(np.max(np.diff(inside)))


def audit_essential_spectrum(
    state: ConstructionState,
    boxes: Sequence[int] | None = None,
    settings: AuditSettings | None = None,
) -> AuditReport:
    """Finite-box proxy for sigma_ess = [-2, 2]: few eigenvalues outside [-2-delta, 2+delta],
    shrinking gaps inside [-inner, inner]. Scored as the largest of outside/allowed,
    gap/previous gap and final gap/gap threshold, against 1."""
    s = settings or AuditSettings()
    boxes = tuple(boxes if boxes is not None else s.spectrum_boxes)
    if not boxes or any(b2 <= b1 for b1, b2 in zip(boxes, boxes[1:])):
        raise ValueError(f"boxes must be non-empty and strictly ascending, got {boxes}")
    V = state.potential
    edge = 2.0 + s.spectrum_delta
    worst = 0.0
    samples = 0
    info: List[Dict[str, Any]] = []
    failures: List[Dict[str, Any]] = []
    for lam in s.spectrum_lams:
        prev_gap: float | None = None
        for n in boxes:
            if n > s.matrix_ceiling:
                raise ValueError(f"box {n} exceeds matrix ceiling {s.matrix_ceiling}")
            evals = eigenvalues(truncate(V, lam, n))
            outside = int(np.count_nonzero(np.abs(evals) > edge))
            allowed = V.barriers_up_to(n) + 1
            gap = _max_inner_gap(evals, s.spectrum_inner)
            ratios = {"outside": outside / allowed}
            if prev_gap is not None:
                ratios["gap_trend"] = gap / prev_gap if prev_gap > 0 else math.inf
            if n == boxes[-1]:
                ratios["final_gap"] = gap / s.spectrum_gap
            prev_gap = gap
            samples += 1
            inputs = {"box": n, "lambda": lam}
            info.append(_row(inputs, gap, s.spectrum_gap, outside=outside, allowed=allowed))
            for key, ratio in ratios.items():
                worst = max(worst, ratio)
                if ratio > 1.0:
                    failures.append(_row(dict(inputs, check=key), ratio, 1.0))
    return _finish(
        "spectrum",
        samples,
        worst,
        1.0,
        "max",
        failures,
        info,
        note=(
            "heuristic finite-box proxy for sigma_ess = [-2, 2]; "
            f"delta={s.spectrum_delta} inner={s.spectrum_inner} gap<={s.spectrum_gap}"
        ),
    )


def _direct_diagonal(V: Potential, lam: float, size: int) -> np.ndarray:
    values = []
    for site in range(1, size + 1):
        h = V.value_at(site)
        if is_infinite(h):
            raise ValueError(f"site {site} of the direct block carries the infinite marker")
        values.append(float(h))  # type: ignore[arg-type]
    diag = np.asarray(values, dtype=np.float64)
    diag[0] += lam
    return diag


def direct_block_amplitudes(
    V: Potential, lam: float, size: int, times: Sequence[float]
) -> np.ndarray:
    """mu_hat of the first `size` sites of V, assembled densely and diagonalized with eigh."""
    mat = np.diag(_direct_diagonal(V, lam, size))
    mat += np.eye(size, k=1) + np.eye(size, k=-1)
    evals, evecs = eigh(mat)
    phases = np.exp(-1j * np.multiply.outer(np.asarray(times, dtype=np.float64), evals))
    return phases @ (evecs[0, :] ** 2)


def compare_block_paths(V: Potential, lam: float, n0: int, times: Sequence[float]) -> float:
    """max_t |decouple_at path - direct dense path| for the block cut at n0."""
    via_decouple = fourier_trace(eigendecompose(decouple_at(V, lam, n0)), times)
    direct = direct_block_amplitudes(V, lam, n0 - 1, times)
    return float(np.max(np.abs(via_decouple - direct)))


def _stage_layout_rows(state: ConstructionState, idx: int) -> List[Dict[str, Any]]:
    """Record-level consistency of stage idx+1: barrier right after the block, block length
    equal to the previous stage's frozen prefix, barrier height present in the final potential."""
    rec = state.stages[idx]
    inputs = {"stage": rec.j, "barrier_site": rec.barrier_site}
    rows: List[Dict[str, Any]] = []
    if rec.barrier_site != rec.N + 1:
        rows.append(_row(inputs, rec.barrier_site, rec.N + 1, check="barrier_after_block"))
    if idx == 0 and rec.barrier_site != state.l1:
        rows.append(_row(inputs, rec.barrier_site, state.l1, check="first_barrier_at_l1"))
    if idx > 0 and rec.N != state.stages[idx - 1].freeze_N_next:
        prev = state.stages[idx - 1].freeze_N_next
        rows.append(_row(inputs, rec.N, prev, check="block_is_frozen_prefix"))
    height = state.potential.value_at(rec.barrier_site)
    if is_infinite(height) or float(height) != rec.K:  # type: ignore[arg-type]
        shown = math.inf if is_infinite(height) else float(height)  # type: ignore[arg-type]
        rows.append(_row(inputs, shown, rec.K, check="barrier_height"))
    return rows


def audit_decoupling(
    state: ConstructionState, settings: AuditSettings | None = None
) -> AuditReport:
    """Stage blocks two ways: decouple_at on V^(j-1) rebuilt from the records, and a dense block
    of N_j sites read off the final potential.

    The record layout and the two diagonals must match exactly before the amplitudes are
    compared against DECOUPLING_TOLERANCE; a layout mismatch scores inf.
    """
    worst = 0.0
    samples = 0
    failures: List[Dict[str, Any]] = []
    for idx, rec in enumerate(state.stages):
        layout = _stage_layout_rows(state, idx)
        if layout:
            failures.extend(layout)
            worst = math.inf
        times = rec.times
        try:
            prefix = stage_potential(state, rec.j - 1)
            blocks = [
                (w.lambda_lo, decouple_at(prefix, w.lambda_lo, rec.barrier_site))
                for w in rec.witnesses
            ]
        except ValueError as e:
            failures.append(_row({"stage": rec.j}, math.inf, 0.0, check="rebuild", error=str(e)))
            worst = math.inf
            continue
        for lam, block in blocks:
            samples += 1
            inputs = {"stage": rec.j, "lambda": lam, "barrier_site": rec.barrier_site}
            if block.size != rec.N:
                failures.append(_row(inputs, block.size, rec.N, check="block_size"))
                worst = math.inf
                continue
            if not np.array_equal(block.diagonal, _direct_diagonal(state.potential, lam, rec.N)):
                failures.append(_row(inputs, math.inf, 0.0, check="diagonal"))
                worst = math.inf
                continue
            via_decouple = fourier_trace(eigendecompose(block), times)
            direct = direct_block_amplitudes(state.potential, lam, rec.N, times)
            diff = float(np.max(np.abs(via_decouple - direct)))
            worst = max(worst, diff)
            if diff > DECOUPLING_TOLERANCE:
                failures.append(
                    _row(inputs, diff, DECOUPLING_TOLERANCE, check="amplitude", N=rec.N)
                )
    return _finish(
        "decoupling", samples, worst, DECOUPLING_TOLERANCE, "max", failures, passed=not failures
    )


@dataclass(frozen=True)
class ChainLink:
    j: int
    t: float
    modulus: float
    error_radius: float


def witness_chain(
    state: ConstructionState, lam: float, tol: float = 1e-6, settings: AuditSettings | None = None
) -> List[ChainLink]:
    """Best stage-j witness for lambda on the final potential, for every stage j >= |lambda|."""
    s = settings or AuditSettings()
    links: List[ChainLink] = []
    for rec in state.stages:
        if rec.j < abs(lam):
            continue
        amps = certified_trace(
            state.potential, lam, rec.times, tol, m_cap=s.m_cap, ceiling=s.matrix_ceiling
        )
        best = max(amps, key=lambda a: a.lower_modulus())
        links.append(ChainLink(rec.j, best.t, best.modulus, best.error_radius))
    return links


def run_audits(
    state: ConstructionState, which: str = "all", settings: AuditSettings | None = None
) -> List[AuditReport]:
    """Selected audits in the fixed order witnesses, freeze, spectrum, decoupling."""
    s = settings or AuditSettings()
    names = AUDIT_ORDER if which == "all" else (which,)
    unknown = [n for n in names if n not in AUDIT_ORDER]
    if unknown:
        raise ValueError(f"unknown audit {unknown[0]!r}; expected all or one of {AUDIT_ORDER}")
    reports: List[AuditReport] = []
    for name in names:
        if name == "witnesses":
            reports.append(audit_witnesses(state, s))
        elif name == "freeze":
            reports.append(audit_freeze(state, s))
        elif name == "spectrum":
            reports.append(audit_essential_spectrum(state, settings=s))
        else:
            reports.append(audit_decoupling(state, s))
    return reports

"""Inductive construction of the sparse barrier potential.

Stage 1 puts a barrier at L1 and covers lambda in [-1, 1] with recurrence times of the decoupled
block {1, ..., L1-1}. Stage j+1 freezes the first N_{j+1} sites of V^(j) (N_{j+1} from the prefix
bound), decouples at N_{j+1}+1, covers [-(j+1), j+1] with times above every earlier time, and
replaces the infinite barrier by the smallest doubling height K whose amplitudes stay within the
stage budget of the decoupled ones.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np

from src.operator_model import FiniteOperator, Potential, decouple_at, make_potential
from src.spectral_engine import (
    DEFAULT_M_CAP,
    DEFAULT_MATRIX_CEILING,
    SpectralMeasure,
    certified_trace,
    eigendecompose,
    fourier_trace,
    lambda_lipschitz,
    min_prefix,
    tail_bound,
    time_lipschitz,
)

logger = logging.getLogger(__name__)

RECURRENCE_THRESHOLD = 0.75
COVER_FLOOR = 0.5
DEFAULT_EPSILON = 0.1
DEFAULT_L1 = 2
DEFAULT_STAGES = 4


class HorizonExhaustedError(RuntimeError):
    def __init__(self, eta: float, horizon: float, best_amplitude: float, best_t: float):
        super().__init__(
            f"no t with |mu_hat(t)| >= {eta} within horizon {horizon:g} "
            f"(best {best_amplitude:.6f} at t={best_t:.6f})"
        )
        self.horizon = horizon
        self.best_amplitude = best_amplitude
        self.best_t = best_t


class CalibrationError(RuntimeError):
    def __init__(self, worst_deviation: float, ceiling: float, budget: float):
        super().__init__(
            f"barrier height reached ceiling {ceiling:g} with deviation {worst_deviation:.3e} "
            f"> {budget / 2:.3e}"
        )
        self.worst_deviation = worst_deviation
        self.ceiling = ceiling


class ConstructionError(RuntimeError):
    def __init__(self, stage: int, operation: str, cause: Exception):
        super().__init__(f"stage {stage}: {operation} failed: {cause}")
        self.stage = stage
        self.operation = operation


@dataclass(frozen=True)
class ConstructionSettings:
    m_cap: float = DEFAULT_M_CAP
    matrix_ceiling: int = DEFAULT_MATRIX_CEILING
    max_time_step: float = 0.25
    recurrence_window: float = 64.0
    recurrence_horizon: float = float(2**20)
    k0: float = 16.0
    k_ceiling: float = float(2**40)
    calibration_tol: float = 1e-9
    max_grid_points: int = 1_000_000


@dataclass(frozen=True)
class TimeWitness:
    t: float
    lambda_lo: float
    lambda_hi: float
    amplitude_floor: float

    def covers(self, lam: float) -> bool:
        return self.lambda_lo <= lam <= self.lambda_hi


@dataclass(frozen=True)
class StageRecord:
    j: int
    N: int
    barrier_site: int
    K: float
    witnesses: Tuple[TimeWitness, ...]
    freeze_N_next: int
    bounds_used: Dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def times(self) -> Tuple[float, ...]:
        return tuple(sorted({w.t for w in self.witnesses}))

    @property
    def t_max(self) -> float:
        return max(w.t for w in self.witnesses)


@dataclass(frozen=True)
class ConstructionState:
    epsilon: float
    stages: Tuple[StageRecord, ...] = ()
    potential: Potential = field(default_factory=Potential)
    l1: int = DEFAULT_L1

    @property
    def J(self) -> int:
        return len(self.stages)

    def times_through(self, j: int) -> Tuple[float, ...]:
        """Sorted T_1 u ... u T_j."""
        out: set[float] = set()
        for rec in self.stages[:j]:
            out.update(rec.times)
        return tuple(sorted(out))

    def t_max(self) -> float:
        return max((rec.t_max for rec in self.stages), default=0.0)


def stage_potential(state: ConstructionState, j: int) -> Potential:
    """V^(j) rebuilt from the first j stage records."""
    if j < 0 or j > state.J:
        raise ValueError(f"stage {j} outside 0..{state.J}")
    return make_potential([(rec.barrier_site, rec.K) for rec in state.stages[:j]])


def find_recurrence_time(
    sm: SpectralMeasure,
    eta: float,
    m: float,
    *,
    max_step: float = 0.25,
    window: float = 64.0,
    horizon: float = float(2**20),
    chunk: int = 4096,
) -> float:
    """First grid time t > m with |mu_hat(t)| >= eta.

    Grid step is (1 - eta) / (2 * time_lipschitz), capped at max_step; the scan runs over growing
    windows [m, m + W], W = window, 2*window, ... up to horizon.
    """
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    lip = time_lipschitz(sm)
    step = max_step if lip <= 0.0 else min(max_step, (1.0 - eta) / (2.0 * lip))
    if eta <= 0.0:
        return m + step

    best_amp, best_t = -1.0, m
    k_next = 1
    span = min(window, horizon)
    while True:
        k_last = int(math.floor(span / step))
        while k_next <= k_last:
            ks = np.arange(k_next, min(k_next + chunk, k_last + 1), dtype=np.float64)
            ts = m + ks * step
            amps = np.abs(fourier_trace(sm, ts))
            hits = np.flatnonzero(amps >= eta)
            if hits.size:
                return float(ts[hits[0]])
            i = int(np.argmax(amps))
            if amps[i] > best_amp:
                best_amp, best_t = float(amps[i]), float(ts[i])
            k_next = int(ks[-1]) + 1
        if span >= horizon:
            raise HorizonExhaustedError(eta, horizon, best_amp, best_t)
        span = min(span * 2.0, horizon)


def recurrence_ladder(
    sm: SpectralMeasure, eta: float, count: int, start: float = 0.0, **search: Any
) -> List[float]:
    """count increasing times, at least 1 apart, each with |mu_hat(t)| >= eta."""
    times: List[float] = []
    floor = start
    for _ in range(count):
        t = find_recurrence_time(sm, eta, floor, **search)
        times.append(t)
        floor = t + 1.0
    return times


def build_time_cover(
    block_of: Callable[[float], FiniteOperator],
    M: float,
    T: float,
    *,
    eta: float = RECURRENCE_THRESHOLD,
    floor: float = COVER_FLOOR,
    settings: ConstructionSettings | None = None,
) -> List[TimeWitness]:
    """Sweep lambda over [-M, M]: a recurrence time t > T at the left end certifies
    [lambda, lambda + (eta - floor)/t] by the lambda-Lipschitz bound."""
    if M <= 0:
        raise ValueError(f"M must be > 0, got {M}")
    s = settings or ConstructionSettings()
    witnesses: List[TimeWitness] = []
    lam = -float(M)
    while True:
        sm = eigendecompose(block_of(lam))
        t = find_recurrence_time(
            sm,
            eta,
            T,
            max_step=s.max_time_step,
            window=s.recurrence_window,
            horizon=s.recurrence_horizon,
        )
        radius = (eta - floor) / lambda_lipschitz(t, 1.0)
        hi = min(lam + radius, float(M))
        witnesses.append(TimeWitness(t, lam, hi, floor))
        if hi >= M:
            return witnesses
        lam = hi


def lambda_grid_size(M: float, step: float) -> int:
    return max(int(math.ceil(2.0 * M / step)) + 1, 2)


def lambda_grid(M: float, step: float) -> np.ndarray:
    return np.linspace(-M, M, lambda_grid_size(M, step))


def _deviation(
    prefix: Potential,
    site: int,
    K: float,
    lams: np.ndarray,
    times: Sequence[float],
    decoupled: Dict[float, np.ndarray],
    s: ConstructionSettings,
) -> float:
    trial = prefix.with_barrier(site, K)
    worst = 0.0
    for lam in lams:
        lam = float(lam)
        if lam not in decoupled:
            decoupled[lam] = fourier_trace(eigendecompose(decouple_at(prefix, lam, site)), times)
        amps = certified_trace(
            trial, lam, times, s.calibration_tol, m_cap=s.m_cap, ceiling=s.matrix_ceiling
        )
        for amp, ref in zip(amps, decoupled[lam]):
            worst = max(worst, abs(amp.value - ref) + amp.error_radius)
    return worst


def calibrate_barrier(
    prefix: Potential,
    site: int,
    witnesses: Sequence[TimeWitness],
    M: float,
    budget: float,
    *,
    k_above: float = 0.0,
    settings: ConstructionSettings | None = None,
) -> Tuple[float, Dict[str, Any]]:
    """Smallest K = k0 * 2^i above k_above whose amplitudes at every witness time stay within
    budget/2 of the decoupled ones on a lambda grid of [-M, M] with step budget/(4 t_max).

    The deviation is 2t-Lipschitz in lambda, so the grid gap costs at most the other budget/2.
    The accepted K is re-checked on a grid twice as fine.
    """
    s = settings or ConstructionSettings()
    times = sorted({w.t for w in witnesses})
    t_max = max(times)
    step = budget / (4.0 * t_max)
    points = lambda_grid_size(M, step / 2.0)
    if points > s.max_grid_points:
        raise ValueError(
            f"calibration grid needs {points} lambda points, above max_grid_points "
            f"{s.max_grid_points} (budget={budget:g}, t_max={t_max:g})"
        )
    coarse = lambda_grid(M, step)
    fine = lambda_grid(M, step / 2.0)
    decoupled: Dict[float, np.ndarray] = {}

    K = float(s.k0)
    while K <= k_above:
        K *= 2.0
    worst = math.inf
    while K <= s.k_ceiling:
        worst = _deviation(prefix, site, K, coarse, times, decoupled, s)
        logger.debug("constructor: calibrate site=%d K=%g deviation=%.3e", site, K, worst)
        if worst <= budget / 2.0:
            recheck = _deviation(prefix, site, K, fine, times, decoupled, s)
            if recheck <= budget / 2.0:
                bounds = {
                    "calibration_budget": budget,
                    "calibration_grid_step": step,
                    "calibration_deviation": worst,
                    "calibration_recheck_deviation": recheck,
                    "calibration_tol": s.calibration_tol,
                    "calibration_rate": "empirical",
                }
                return K, bounds
            worst = recheck
        K *= 2.0
    raise CalibrationError(worst, s.k_ceiling, budget)


def _prefix_length(stages: Sequence[StageRecord], epsilon: float) -> Tuple[int, float]:
    j = len(stages)
    last = stages[-1]
    t_max = max(rec.t_max for rec in stages)
    n = max(min_prefix(epsilon, j, t_max), last.N + j, last.barrier_site + 1)
    return n, t_max


def choose_prefix_length(state: ConstructionState) -> int:
    """N_{j+1} = max(min_prefix(eps, j, T_max), N_j + j, barrier_site_j + 1)."""
    if not state.stages:
        raise ValueError("choose_prefix_length needs at least one completed stage")
    return _prefix_length(state.stages, state.epsilon)[0]


def _run(stage: int, operation: str, fn: Callable[[], Any]) -> Any:
    try:
        return fn()
    except Exception as e:
        logger.error("constructor: stage %d %s failed: %s", stage, operation, e)
        raise ConstructionError(stage, operation, e) from e


def run_stage(
    state: ConstructionState, settings: ConstructionSettings | None = None
) -> ConstructionState:
    s = settings or ConstructionSettings()
    j = state.J
    stage = j + 1
    eps = state.epsilon
    if j == 0:
        site, N = state.l1, state.l1 - 1
        prefix = make_potential()
        time_floor = 1.0
        k_above = 0.0
    else:
        last = state.stages[-1]
        N = _run(stage, "choose_prefix_length", lambda: choose_prefix_length(state))
        site = N + 1
        prefix = state.potential
        time_floor = max(float(stage), state.t_max())
        k_above = last.K + j
    M = float(stage)

    witnesses = _run(
        stage,
        "build_time_cover",
        lambda: build_time_cover(
            lambda lam: decouple_at(prefix, lam, site), M, time_floor, settings=s
        ),
    )
    K, bounds = _run(
        stage,
        "calibrate_barrier",
        lambda: calibrate_barrier(prefix, site, witnesses, M, eps, k_above=k_above, settings=s),
    )
    potential = prefix.with_barrier(site, K)

    bounds.update(
        {
            "recurrence_threshold": RECURRENCE_THRESHOLD,
            "cover_floor": COVER_FLOOR,
            "cover_radius": "(threshold - floor) / t",
            "time_floor": time_floor,
            "stage_floor": COVER_FLOOR - eps,
        }
    )
    record = StageRecord(stage, N, site, K, tuple(witnesses), 0, bounds)
    stages = state.stages + (record,)
    n_next, t_max = _prefix_length(stages, eps)
    bounds.update(
        {
            "freeze_M": float(stage),
            "freeze_T_max": t_max,
            "freeze_tail": tail_bound(n_next, stage, t_max),
        }
    )
    record = dataclasses.replace(record, freeze_N_next=n_next)
    logger.info(
        "constructor: stage %d done N=%d site=%d K=%g witnesses=%d t_max=%.6f N_next=%d",
        stage,
        N,
        site,
        K,
        len(witnesses),
        record.t_max,
        n_next,
    )
    return dataclasses.replace(state, stages=state.stages + (record,), potential=potential)


def run_construction(
    J: int = DEFAULT_STAGES,
    epsilon: float = DEFAULT_EPSILON,
    L1: int = DEFAULT_L1,
    settings: ConstructionSettings | None = None,
) -> ConstructionState:
    if J < 1:
        raise ValueError(f"stages must be >= 1, got {J}")
    if not 0.0 < epsilon < 0.25:
        raise ValueError(f"epsilon must lie in (0, 1/4), got {epsilon}")
    if L1 < 2:
        raise ValueError(f"L1 must be >= 2, got {L1}")
    state = ConstructionState(epsilon=float(epsilon), l1=int(L1))
    for _ in range(J):
        state = run_stage(state, settings)
    return state

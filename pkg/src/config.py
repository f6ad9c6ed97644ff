"""Run configuration: defaults < environment (.env) < --config key=value file < flags."""

from __future__ import annotations

import dataclasses
import logging
import os
import pathlib
from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Tuple

from dotenv import dotenv_values

from src.constructor import ConstructionSettings
from src.spectral_engine import DEFAULT_M_CAP, DEFAULT_MATRIX_CEILING
from src.verifier import AuditSettings

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _optional(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(raw: str) -> Any:
        return None if raw.strip().lower() in {"", "none", "null"} else conv(raw)

    return parse


def _int_tuple(raw: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)


@dataclass(frozen=True)
class RunConfig:
    stages: int = 4
    epsilon: float = 0.1
    l1: int = 2
    m_cap: float = DEFAULT_M_CAP
    matrix_ceiling: int = DEFAULT_MATRIX_CEILING
    max_time_step: float = 0.25
    recurrence_window: float = 64.0
    recurrence_horizon: float = float(2**20)
    k0: float = 16.0
    k_ceiling: float = float(2**40)
    certify_tol: float = 1e-6
    calibration_tol: float = 1e-9
    max_grid_points: int = 1_000_000
    freeze_tol: float = 1e-10
    audit_grid_step: float | None = None
    spectrum_boxes: Tuple[int, ...] = (500, 1000, 2000, 4000)
    spectrum_delta: float = 0.05
    spectrum_inner: float = 1.9
    spectrum_gap: float = 0.1
    spot_seed: int | None = None
    spot_samples: int = 64
    state_file: str = "out/state.json"

    def validate(self) -> "RunConfig":
        if not 0.0 < self.epsilon < 0.25:
            raise ConfigError(f"epsilon must lie in (0, 1/4), got {self.epsilon}")
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.l1 < 2:
            raise ConfigError(f"l1 must be >= 2, got {self.l1}")
        if self.m_cap <= 0:
            raise ConfigError(f"m_cap must be > 0, got {self.m_cap}")
        if self.matrix_ceiling < 1:
            raise ConfigError(f"matrix_ceiling must be >= 1, got {self.matrix_ceiling}")
        for name in ("certify_tol", "calibration_tol", "freeze_tol", "max_time_step"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.audit_grid_step is not None and self.audit_grid_step <= 0:
            raise ConfigError(f"audit_grid_step must be > 0, got {self.audit_grid_step}")
        boxes = self.spectrum_boxes
        if not boxes or boxes[0] < 1 or any(b <= a for a, b in zip(boxes, boxes[1:])):
            raise ConfigError(f"spectrum_boxes must be positive and ascending, got {boxes}")
        if self.max_grid_points < 2:
            raise ConfigError(f"max_grid_points must be >= 2, got {self.max_grid_points}")
        if self.spot_samples < 0:
            raise ConfigError(f"spot_samples must be >= 0, got {self.spot_samples}")
        _check_writable(self.state_file, "state_file")
        return self

    def construction_settings(self) -> ConstructionSettings:
        return ConstructionSettings(
            m_cap=self.m_cap,
            matrix_ceiling=self.matrix_ceiling,
            max_time_step=self.max_time_step,
            recurrence_window=self.recurrence_window,
            recurrence_horizon=self.recurrence_horizon,
            k0=self.k0,
            k_ceiling=self.k_ceiling,
            calibration_tol=self.calibration_tol,
            max_grid_points=self.max_grid_points,
        )

    def audit_settings(self) -> AuditSettings:
        return AuditSettings(
            grid_step=self.audit_grid_step,
            certify_tol=self.certify_tol,
            freeze_tol=self.freeze_tol,
            spectrum_boxes=self.spectrum_boxes,
            spectrum_delta=self.spectrum_delta,
            spectrum_inner=self.spectrum_inner,
            spectrum_gap=self.spectrum_gap,
            spot_seed=self.spot_seed,
            spot_samples=self.spot_samples,
            m_cap=self.m_cap,
            matrix_ceiling=self.matrix_ceiling,
        )


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "stages": int,
    "epsilon": float,
    "l1": int,
    "m_cap": float,
    "matrix_ceiling": int,
    "max_time_step": float,
    "recurrence_window": float,
    "recurrence_horizon": float,
    "k0": float,
    "k_ceiling": float,
    "certify_tol": float,
    "calibration_tol": float,
    "max_grid_points": int,
    "freeze_tol": float,
    "audit_grid_step": _optional(float),
    "spectrum_boxes": _int_tuple,
    "spectrum_delta": float,
    "spectrum_inner": float,
    "spectrum_gap": float,
    "spot_seed": _optional(int),
    "spot_samples": int,
    "state_file": str,
}


def _check_writable(path: str, name: str) -> None:
    probe = pathlib.Path(path).parent
    while not probe.exists():
        if probe.parent == probe:
            break
        probe = probe.parent
    if probe.exists() and not probe.is_dir():
        raise ConfigError(f"{name}: {probe} is not a directory")
    if not os.access(probe, os.W_OK):
        raise ConfigError(f"{name}: {probe} is not writable")


def _parse_layer(raw: Mapping[str, str | None], source: str) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for field_name, conv in _PARSERS.items():
        val = raw.get(field_name.upper())
        if val is None:
            continue
        try:
            out[field_name] = conv(str(val).strip())
        except ValueError as e:
            raise ConfigError(f"{source}: bad value for {field_name.upper()}={val!r}: {e}") from e
    return out


def load_config(
    config_path: str | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge the layers and validate. `overrides` holds parsed flags; None values are skipped."""
    values: Dict[str, Any] = {}
    values.update(_parse_layer(os.environ if env is None else env, "environment"))
    if config_path:
        if not pathlib.Path(config_path).is_file():
            raise ConfigError(f"config file not found: {config_path}")
        values.update(_parse_layer(dotenv_values(config_path), config_path))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _PARSERS:
            raise ConfigError(f"unknown setting {key!r}")
        values[key] = val
    if "spectrum_boxes" in values:
        values["spectrum_boxes"] = tuple(int(b) for b in values["spectrum_boxes"])
    cfg = dataclasses.replace(RunConfig(), **values)
    logger.debug("config: loaded %s", values)
    return cfg.validate()

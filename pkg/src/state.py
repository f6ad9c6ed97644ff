import json
import math
import os
import pathlib
import tempfile
from typing import Any, Dict, List

from src.constructor import ConstructionState, StageRecord, TimeWitness
from src.operator_model import Marker, PotentialError, is_infinite, make_potential

FORMAT_VERSION = 1
DEFAULT_STATE_FILE = os.getenv("STATE_FILE", "out/state.json")


class StateFormatError(ValueError):
    """Malformed or unsupported construction state file."""


def _ensure_parent(path: pathlib.Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def _atomic_write(path: pathlib.Path, content: str) -> None:
    """Write content to a temporary file and rename it to the target path for atomicity."""
    _ensure_parent(path)
    tmp_fd, tmp_path = tempfile.mkstemp(dir=path.parent, text=True)
    try:
        with os.fdopen(tmp_fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_text(path: str | pathlib.Path, content: str) -> None:
    _atomic_write(pathlib.Path(path), content)


def format_float(x: float) -> str:
    """17 significant digits; enough to round-trip every double."""
    return format(float(x), ".17g")


def format_height(h: float | Marker) -> str:
    return Marker.INFINITE.value if is_infinite(h) else format_float(h)  # type: ignore[arg-type]


def _canonical(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        # JSON has no literal for inf/nan
        return format_float(obj) if math.isfinite(obj) else json.dumps(str(obj))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(k), ensure_ascii=False)}: "
            f"{_canonical(obj[k], indent, level + 1)}"
            for k in sorted(obj, key=str)
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_canonical(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj: Any, indent: int = 2) -> str:
    """Sorted keys, fixed indent, floats at 17 significant digits, trailing newline."""
    return _canonical(obj, indent, 0) + "\n"


def _stage_to_dict(rec: StageRecord) -> Dict[str, Any]:
    return {
        "j": rec.j,
        "N": rec.N,
        "barrier_site": rec.barrier_site,
        "K": format_height(rec.K),
        "freeze_N_next": rec.freeze_N_next,
        "times": [float(t) for t in rec.times],
        "cover": [
            {
                "t": w.t,
                "lambda_lo": w.lambda_lo,
                "lambda_hi": w.lambda_hi,
                "floor": w.amplitude_floor,
            }
            for w in rec.witnesses
        ],
        "bounds_used": dict(rec.bounds_used),
    }


def state_to_dict(state: ConstructionState) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "epsilon": state.epsilon,
        "l1": state.l1,
        "stages": [_stage_to_dict(rec) for rec in state.stages],
        "potential": {
            "barriers": [
                {"site": site, "height": format_height(h)} for site, h in state.potential.barriers
            ]
        },
    }


def dumps_state(state: ConstructionState) -> str:
    return canonical_json(state_to_dict(state))


def _require(obj: Dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(obj, dict):
        raise StateFormatError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise StateFormatError(f"{where}: missing key {key!r}")
    return obj[key]


def _as_int(val: Any, where: str) -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        raise StateFormatError(f"{where}: expected an integer, got {val!r}")
    return val


def _as_float(val: Any, where: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise StateFormatError(f"{where}: expected a number, got {val!r}")
    return float(val)


def _parse_height(val: Any, where: str) -> float | Marker:
    if val == Marker.INFINITE.value:
        return Marker.INFINITE
    if not isinstance(val, str):
        raise StateFormatError(f"{where}: height must be a decimal string or 'inf', got {val!r}")
    try:
        h = float(val)
    except ValueError as e:
        raise StateFormatError(f"{where}: unparseable height {val!r}") from e
    if not math.isfinite(h):
        raise StateFormatError(f"{where}: height {val!r} is not finite")
    return h


def _stage_from_dict(obj: Dict[str, Any], idx: int) -> StageRecord:
    where = f"stages[{idx}]"
    cover = _require(obj, "cover", where)
    if not isinstance(cover, list) or not cover:
        raise StateFormatError(f"{where}.cover: expected a non-empty list")
    witnesses: List[TimeWitness] = []
    for k, w in enumerate(cover):
        wh = f"{where}.cover[{k}]"
        witnesses.append(
            TimeWitness(
                _as_float(_require(w, "t", wh), f"{wh}.t"),
                _as_float(_require(w, "lambda_lo", wh), f"{wh}.lambda_lo"),
                _as_float(_require(w, "lambda_hi", wh), f"{wh}.lambda_hi"),
                _as_float(_require(w, "floor", wh), f"{wh}.floor"),
            )
        )
    K = _parse_height(_require(obj, "K", where), f"{where}.K")
    if is_infinite(K):
        raise StateFormatError(f"{where}.K: a completed stage cannot carry the infinite marker")
    bounds = obj.get("bounds_used", {})
    if not isinstance(bounds, dict):
        raise StateFormatError(f"{where}.bounds_used: expected an object")
    return StageRecord(
        j=_as_int(_require(obj, "j", where), f"{where}.j"),
        N=_as_int(_require(obj, "N", where), f"{where}.N"),
        barrier_site=_as_int(_require(obj, "barrier_site", where), f"{where}.barrier_site"),
        K=float(K),  # type: ignore[arg-type]
        witnesses=tuple(witnesses),
        freeze_N_next=_as_int(_require(obj, "freeze_N_next", where), f"{where}.freeze_N_next"),
        bounds_used=dict(bounds),
    )


def state_from_dict(obj: Dict[str, Any]) -> ConstructionState:
    version = _require(obj, "format_version", "state")
    if version != FORMAT_VERSION:
        raise StateFormatError(f"state: unsupported format_version {version!r}")
    epsilon = _as_float(_require(obj, "epsilon", "state"), "state.epsilon")
    if not 0.0 < epsilon < 0.25:
        raise StateFormatError(f"state.epsilon: {epsilon} outside (0, 1/4)")
    l1 = _as_int(obj.get("l1", 2), "state.l1")
    raw_stages = _require(obj, "stages", "state")
    if not isinstance(raw_stages, list):
        raise StateFormatError("state.stages: expected a list")
    stages = tuple(_stage_from_dict(s, i) for i, s in enumerate(raw_stages))
    for i, rec in enumerate(stages):
        if rec.j != i + 1:
            raise StateFormatError(f"stages[{i}].j: expected {i + 1}, got {rec.j}")
    raw_barriers = _require(_require(obj, "potential", "state"), "barriers", "state.potential")
    if not isinstance(raw_barriers, list):
        raise StateFormatError("state.potential.barriers: expected a list")
    barriers = []
    for i, b in enumerate(raw_barriers):
        where = f"state.potential.barriers[{i}]"
        site = _as_int(_require(b, "site", where), f"{where}.site")
        barriers.append((site, _parse_height(_require(b, "height", where), f"{where}.height")))
    try:
        potential = make_potential(barriers)
    except PotentialError as e:
        raise StateFormatError(f"state.potential: {e}") from e
    return ConstructionState(epsilon=epsilon, stages=stages, potential=potential, l1=l1)


def loads_state(text: str) -> ConstructionState:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise StateFormatError(f"state: invalid JSON at line {e.lineno} col {e.colno}: {e.msg}")
    return state_from_dict(obj)


def save_state(state: ConstructionState, path: str | pathlib.Path = DEFAULT_STATE_FILE) -> None:
    _atomic_write(pathlib.Path(path), dumps_state(state))


def load_state(path: str | pathlib.Path = DEFAULT_STATE_FILE) -> ConstructionState:
    p = pathlib.Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise StateFormatError(f"state: cannot read {p}: {e.strerror or e}") from e
    return loads_state(text)

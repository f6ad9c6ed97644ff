import csv
import io
import math
from typing import Iterable, List, Sequence

import numpy as np

from src.constructor import ConstructionState
from src.spectral_engine import CertifiedAmplitude
from src.state import format_float
from src.verifier import AuditReport, ChainLink

SVG_WIDTH = 640
SVG_HEIGHT = 360
SVG_MARGIN = 48


def _csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def trace_csv(amps: Sequence[CertifiedAmplitude]) -> str:
    return _csv(
        ("t", "re", "im", "abs", "error_radius"),
        (
            (a.t, a.value.real, a.value.imag, a.modulus, a.error_radius)
            for a in amps
        ),
    )


def eigenvalues_csv(evals: np.ndarray) -> str:
    return _csv(("index", "eigenvalue"), ((i, float(e)) for i, e in enumerate(evals)))


def chain_csv(links: Sequence[ChainLink]) -> str:
    return _csv(
        ("j", "t", "abs", "error_radius"),
        ((link.j, link.t, link.modulus, link.error_radius) for link in links),
    )


def trace_svg(ts: Sequence[float], values: Sequence[float], title: str = "") -> str:
    """Polyline of |mu_hat| against t with a bare frame; presentation only."""
    w, h, m = SVG_WIDTH, SVG_HEIGHT, SVG_MARGIN
    t_lo, t_hi = (min(ts), max(ts)) if ts else (0.0, 1.0)
    if t_hi <= t_lo:
        t_hi = t_lo + 1.0
    y_hi = max(1.0, max(values, default=1.0))

    def px(t: float) -> float:
        return m + (w - 2 * m) * (t - t_lo) / (t_hi - t_lo)

    def py(v: float) -> float:
        return h - m - (h - 2 * m) * v / y_hi

    points = " ".join(f"{px(t):.2f},{py(v):.2f}" for t, v in zip(ts, values))
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">',
            f'<rect x="{m}" y="{m}" width="{w - 2 * m}" height="{h - 2 * m}" '
            'fill="none" stroke="#888"/>',
            f'<text x="{m}" y="{m - 12}" font-size="14">{title}</text>',
            f'<text x="{m}" y="{h - m + 20}" font-size="12">t={t_lo:g}</text>',
            f'<text x="{w - m}" y="{h - m + 20}" font-size="12" '
            f'text-anchor="end">t={t_hi:g}</text>',
            f'<text x="{m - 6}" y="{py(y_hi) + 4:.2f}" font-size="12" text-anchor="end">'
            f"{y_hi:g}</text>",
            f'<text x="{m - 6}" y="{h - m + 4}" font-size="12" text-anchor="end">0</text>',
            f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{points}"/>',
            "</svg>",
            "",
        ]
    )


def _num(x: float) -> str:
    return f"{x:.6g}" if math.isfinite(x) else str(x)


def report_text(reports: Sequence[AuditReport]) -> str:
    lines: List[str] = []
    for r in reports:
        verdict = "PASS" if r.passed else "FAIL"
        cmp = ">=" if r.direction == "min" else "<="
        lines.append(
            f"[{verdict}] {r.name}: worst={_num(r.worst_case)} (need {cmp} {_num(r.threshold)}) "
            f"samples={r.samples}"
        )
        if r.note:
            lines.append(f"    note: {r.note}")
        if r.seed is not None:
            lines.append(f"    seed: {r.seed}")
        if not r.passed:
            for row in r.details[:10]:
                inputs = " ".join(f"{k}={v}" for k, v in row.get("input", {}).items())
                lines.append(
                    f"    {inputs} measured={_num(row['measured'])} bound={_num(row['bound'])}"
                )
            if len(r.details) > 10:
                lines.append(f"    ... {len(r.details) - 10} more rows")
    return "\n".join(lines) + "\n"


def stage_table(state: ConstructionState) -> str:
    header = (
        f"{'j':>3} {'N':>6} {'site':>6} {'K':>10} {'wit':>5} "
        f"{'t_min':>10} {'t_max':>10} {'N_next':>7}"
    )
    lines = [f"epsilon={state.epsilon:g} l1={state.l1} stages={state.J}", header, "-" * len(header)]
    for rec in state.stages:
        times = rec.times
        lines.append(
            f"{rec.j:>3} {rec.N:>6} {rec.barrier_site:>6} {rec.K:>10g} {len(rec.witnesses):>5} "
            f"{times[0]:>10.4f} {times[-1]:>10.4f} {rec.freeze_N_next:>7}"
        )
    return "\n".join(lines) + "\n"

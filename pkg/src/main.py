"""Command-line driver: python -m src.main <construct|evaluate|audit|spectrum|chain> [flags].

Exit codes: 0 success, 1 audit failure, 2 usage error or infeasible request.
"""

import argparse
import logging
import math
import sys
from typing import Any, Dict, List, Sequence

from dotenv import load_dotenv

from src.config import ConfigError, RunConfig, load_config
from src.constructor import ConstructionError, run_construction
from src.formatter import chain_csv, eigenvalues_csv, report_text, trace_csv, trace_svg
from src.operator_model import Potential, truncate, zero_potential
from src.spectral_engine import certified_trace, eigenvalues
from src.state import canonical_json, load_state, save_state, write_text
from src.verifier import AUDIT_ORDER, run_audits, witness_chain

logger = logging.getLogger("main")

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_USAGE = 2


def _init_logging() -> None:
    # Centralized JSON logging (set LOG_PLAIN=1 for text)
    from src.logging_setup import setup_logging

    setup_logging()


def _emit(text: str, out: str | None) -> None:
    if out:
        write_text(out, text)
    else:
        sys.stdout.write(text)


def _potential(path: str | None) -> Potential:
    return load_state(path).potential if path else zero_potential()


def _time_grid(start: float, stop: float, step: float) -> List[float]:
    if step <= 0:
        raise ConfigError(f"--step must be > 0, got {step}")
    if stop < start:
        raise ConfigError(f"--t-stop {stop} is below --t-start {start}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(count)]


def cmd_construct(args: argparse.Namespace, cfg: RunConfig) -> int:
    state = run_construction(
        J=cfg.stages, epsilon=cfg.epsilon, L1=cfg.l1, settings=cfg.construction_settings()
    )
    save_state(state, cfg.state_file)
    logger.info("main: construct wrote %s stages=%d", cfg.state_file, state.J)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    V = _potential(args.state)
    ts = _time_grid(args.t_start, args.t_stop, args.step)
    tol = args.tol if args.tol is not None else cfg.certify_tol
    amps = certified_trace(
        V, args.lam, ts, tol, m_cap=cfg.m_cap, ceiling=cfg.matrix_ceiling
    )
    _emit(trace_csv(amps), args.out)
    if args.svg:
        title = f"|mu_hat(t)| at lambda={args.lam:g}"
        write_text(args.svg, trace_svg(ts, [a.modulus for a in amps], title))
    logger.info(
        "main: evaluate lam=%s rows=%d box=%d", args.lam, len(amps), amps[0].box if amps else 0
    )
    return EXIT_OK


def cmd_audit(args: argparse.Namespace, cfg: RunConfig) -> int:
    state = load_state(args.state)
    reports = run_audits(state, args.which, cfg.audit_settings())
    if args.out:
        write_text(args.out, canonical_json([r.to_dict() for r in reports]))
    sys.stdout.write(report_text(reports))
    ok = all(r.passed for r in reports)
    if not ok:
        failed = [r.name for r in reports if not r.passed]
        logger.warning("main: audit failed: %s", ",".join(failed))
    return EXIT_OK if ok else EXIT_AUDIT_FAILED


def cmd_spectrum(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.box > cfg.matrix_ceiling:
        raise ConfigError(f"--box {args.box} exceeds matrix ceiling {cfg.matrix_ceiling}")
    evals = eigenvalues(truncate(_potential(args.state), args.lam, args.box))
    _emit(eigenvalues_csv(evals), args.out)
    return EXIT_OK


def cmd_chain(args: argparse.Namespace, cfg: RunConfig) -> int:
    state = load_state(args.state)
    tol = args.tol if args.tol is not None else cfg.certify_tol
    links = witness_chain(state, args.lam, tol, cfg.audit_settings())
    _emit(chain_csv(links), args.out)
    floor = 0.5 - 2.0 * state.epsilon
    ok = all(link.modulus - link.error_radius >= floor for link in links)
    return EXIT_OK if ok else EXIT_AUDIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m src.main", description=__doc__)
    ap.add_argument("--config", help="key=value file overriding defaults and environment")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", help="run the stage construction and write the state")
    p.add_argument("--stages", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--l1", type=int)
    p.add_argument("--m-cap", dest="m_cap", type=float)
    p.add_argument("--matrix-ceiling", dest="matrix_ceiling", type=int)
    p.add_argument("--out", dest="state_file", help="state file to write")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("evaluate", help="certified |mu_hat(t)| trace as CSV")
    p.add_argument("--state", help="state file (default: zero potential)")
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-stop", type=float, required=True)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--svg", help="also write an SVG plot of |mu_hat| here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit", help="run audits on a state file")
    p.add_argument("--state", required=True)
    p.add_argument("--which", choices=("all",) + AUDIT_ORDER, default="all")
    p.add_argument("--grid-step", dest="audit_grid_step", type=float)
    p.add_argument("--spot-seed", dest="spot_seed", type=int)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("spectrum", help="eigenvalues of a finite box as CSV")
    p.add_argument("--state", help="state file (default: zero potential)")
    p.add_argument("--box", type=int, required=True)
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("chain", help="best witness per stage for one lambda")
    p.add_argument("--state", required=True)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--tol", type=float)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_chain)
    return ap


_CONFIG_FLAGS = (
    "stages",
    "epsilon",
    "l1",
    "m_cap",
    "matrix_ceiling",
    "state_file",
    "audit_grid_step",
    "spot_seed",
)


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    _init_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    overrides: Dict[str, Any] = {k: getattr(args, k, None) for k in _CONFIG_FLAGS}
    try:
        cfg = load_config(args.config, overrides)
        return int(args.func(args, cfg))
    except ConstructionError as e:
        logger.error("main: %s failed at stage %d (%s): %s", args.command, e.stage, e.operation, e)
        sys.stderr.write(f"error: stage {e.stage} {e.operation}: {e.__cause__ or e}\n")
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError) as e:
        # ConfigError, StateFormatError, BoxCeilingError, PotentialError, EigensolverError
        logger.error("main: %s failed: %s", args.command, e)
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

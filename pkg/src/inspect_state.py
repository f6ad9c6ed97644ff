import logging
import sys
from typing import Sequence

from src.formatter import stage_table
from src.logging_setup import setup_logging
from src.state import DEFAULT_STATE_FILE, StateFormatError, load_state


def run(path: str = DEFAULT_STATE_FILE) -> int:
    setup_logging()
    logger = logging.getLogger("inspect_state")
    try:
        state = load_state(path)
    except StateFormatError as e:
        logger.error("inspect_state: %s", e)
        return 2
    logger.info("inspect_state: %s has %d stages", path, state.J)
    print(stage_table(state), end="")
    barriers = ", ".join(f"{site}:{h:g}" for site, h in state.potential.barriers)  # type: ignore
    print(f"barriers: {barriers or '(none)'}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    return run(args[0] if args else DEFAULT_STATE_FILE)


if __name__ == "__main__":
    sys.exit(main())

# utils.py: Logging setup and small helpers shared by all commands.
# Why: Keeps auxiliary code separate, reusable across packages.

import logging
import sys
import time
from pathlib import Path
from typing import Optional


class ASCIIFilter(logging.Filter):
    """
    Logging filter that replaces non-ASCII characters in messages.
    Why: Keeps console output readable on terminals without UTF-8 support.
    """

    REPLACEMENTS = {
        "‰": "permille",
        "σ": "sigma",
        "λ": "lambda",
        "ρ": "rho",
        "τ": "tau",
        "ε": "eps",
        "×": "x",
        "→": "->",
    }

    def filter(self, record):
        if isinstance(record.msg, str):
            record.msg = self.sanitize_text(record.msg)
        if record.args:
            record.args = tuple(
                self.sanitize_text(arg) if isinstance(arg, str) else arg for arg in record.args
            )
        return True

    def sanitize_text(self, text: str) -> str:
        """Replace known symbols, then drop anything still outside ASCII."""
        for symbol, ascii_text in self.REPLACEMENTS.items():
            text = text.replace(symbol, ascii_text)
        return text.encode("ascii", errors="replace").decode("ascii")


def setup_logging(log_file: Optional[Path] = None, level: str = "INFO") -> logging.Logger:
    """
    Configure root logging with a UTF-8 file handler and an ASCII-safe console handler.

    Args:
        log_file: Optional path of the run log. Parent directories are created.
        level: Logging level name.

    Returns:
        logging.Logger: The "difftf" logger.
    """
    console = logging.StreamHandler(sys.stdout)
    handlers = []
    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    handlers.append(console)

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        handlers=handlers,
        force=True
    )

    # The filter rewrites the shared record, so the file handler must run first.
    console.addFilter(ASCIIFilter())

    return logging.getLogger("difftf")


def log_banner(logger: logging.Logger, title: str) -> None:
    """Log a title between two '=' rules."""
    logger.info("=" * 70)
    logger.info(title)
    logger.info("=" * 70)


class Stopwatch:
    """Wall-clock timer used for per-object and per-command timings."""

    def __init__(self):
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

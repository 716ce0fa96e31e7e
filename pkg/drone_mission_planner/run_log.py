"""
Run log shared by the CLI and the pipeline stages.
"""

import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional


class RunLog:
    """Appends timestamped lines to a log file and optionally echoes them to stderr."""

    def __init__(self, log_file: Optional[Path] = None, verbose: bool = False) -> None:
        """
        Args:
            log_file: File to append to; None keeps the log in memory only
            verbose: Echo every line to stderr
        """
        self.log_file = Path(log_file) if log_file else None
        self.verbose = verbose
        self.lines: list = []

    def __call__(self, message: str) -> None:
        self.log(message)

    def log(self, message: str) -> None:
        """
        Write a message to the log file.

        Args:
            message: Message to log
        """
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        line = f"[{timestamp}] {message}"
        self.lines.append(line)
        if self.log_file is not None:
            try:
                self.log_file.parent.mkdir(parents=True, exist_ok=True)
                with open(self.log_file, "a", encoding="utf-8") as handle:
                    handle.write(line + "\n")
                    handle.flush()
                    os.fsync(handle.fileno())
            except OSError as exc:
                print(f"Warning: Failed to write to log file {self.log_file}: {exc}", file=sys.stderr)
        if self.verbose:
            print(message, file=sys.stderr)


def null_log(_message: str) -> None:
    """Log sink used when a caller passes no log."""

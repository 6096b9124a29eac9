"""
Output-directory lock.

Concurrent CLI invocations writing to the same output directory would
interleave bundles and reports, so each run holds `.celltriage.lock`
(containing the owner PID) for its duration. A lock whose PID no longer
runs is stale and is replaced with a warning.
"""

import logging
import os
from pathlib import Path
from typing import Optional, Union

import psutil

logger = logging.getLogger(__name__)

LOCK_NAME = ".celltriage.lock"


class LockContentionError(RuntimeError):
    """Another live process holds the output directory."""

    def __init__(self, message: str, pid: Optional[int] = None):
        super().__init__(message)
        self.pid = pid


def _is_process_alive(pid: int) -> bool:
    """Check if a process with given PID is still running."""
    try:
        process = psutil.Process(pid)
        return process.is_running() and process.status() != psutil.STATUS_ZOMBIE
    except (psutil.NoSuchProcess, psutil.AccessDenied):
        return False


def _read_pid(lock_path: Path) -> Optional[int]:
    try:
        return int(lock_path.read_text().strip())
    except (OSError, ValueError):
        return None


class RunLock:
    """
    Context manager holding the lock of one output directory.

    Usage:
        with RunLock(out_dir):
            ... write bundle and reports ...
    """

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.lock_path = self.out_dir / LOCK_NAME
        self._held = False

    def acquire(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                pid = _read_pid(self.lock_path)
                if pid is not None and pid != os.getpid() and _is_process_alive(pid):
                    raise LockContentionError(
                        f"Output directory {self.out_dir} is in use by process {pid} "
                        f"(lock file {self.lock_path})",
                        pid=pid,
                    )
                logger.warning(f"Removing stale lock {self.lock_path} (owner PID {pid} is not running)")
                self.lock_path.unlink(missing_ok=True)
                continue
            with os.fdopen(fd, "w") as f:
                f.write(str(os.getpid()))
            self._held = True
            return
        raise LockContentionError(f"Could not acquire {self.lock_path}")

    def release(self) -> None:
        if self._held:
            self.lock_path.unlink(missing_ok=True)
            self._held = False

    def __enter__(self) -> "RunLock":
        self.acquire()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.release()

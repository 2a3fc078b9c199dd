# vault_io.py
# Atomic, lock-serialized text writes shared by every writer in this layer.

import os
import tempfile
import time
from pathlib import Path


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix="tmp")
    try:
        # newline="" keeps "\n" on every platform so reruns are byte-identical
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# Cross-platform directory lock (mkdir is atomic). Serializes writers per output path.
def _acquire_lock(path: Path, timeout: float = 5.0, poll: float = 0.05):
    """
    Acquire a lock for the given path by creating a lock directory next to it.
    Returns the Path to the lockdir when acquired.
    Raises TimeoutError if lock not acquired within timeout.
    """
    lockdir = Path(str(path) + ".lockdir")
    lockdir.parent.mkdir(parents=True, exist_ok=True)
    start = time.time()
    while True:
        try:
            os.mkdir(lockdir)
            return lockdir
        except FileExistsError:
            if (time.time() - start) >= timeout:
                raise TimeoutError(f"Failed to acquire lock for {path} within {timeout}s")
            time.sleep(poll)


def _release_lock(lockdir: Path):
    try:
        os.rmdir(lockdir)
    except FileNotFoundError:
        pass


def write_text(path, text):
    """Write text to path atomically while holding the path's lock. Returns the Path."""
    p = Path(path)
    lock = None
    try:
        lock = _acquire_lock(p)
        _atomic_write(p, text)
        print(f"[Vault] wrote {p}", flush=True)
        return p
    finally:
        if lock is not None:
            _release_lock(lock)


def fmt(value, digits=12):
    """Fixed significant-digit formatting; -0 prints as 0."""
    v = float(value)
    if v == 0.0:
        v = 0.0
    return f"{v:.{digits}g}"

"""Advisory single-writer lock for a project directory.

One lock file under the project root guards mutation; readers need no
lock. The lock is reentrant within a process so that composite operations
(import -> fig-add) nest without deadlocking. Cross-process safety comes
from O_EXCL creation.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from pathlib import Path

from .errors import LockHeld

LOCK_FILENAME = ".lock"

_held_depth: dict[str, int] = {}


@contextmanager
def project_lock(root):
    root = Path(root)
    key = str(root.resolve())
    if _held_depth.get(key, 0) > 0:
        _held_depth[key] += 1
        try:
            yield
        finally:
            _held_depth[key] -= 1
        return

    lock_path = root / LOCK_FILENAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeld(f"project is locked by another writer: {lock_path}")
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
    finally:
        os.close(fd)
    _held_depth[key] = 1
    try:
        yield
    finally:
        _held_depth[key] -= 1
        try:
            lock_path.unlink()
        except FileNotFoundError:
            pass

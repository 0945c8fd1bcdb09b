"""Content-addressed on-disk store for period kernels.

Entries are ``<sha256>.npz`` files written atomically under a lock.  Readers
touch the file's mtime so that :func:`cache_gc` can evict least recently used
entries.  A run registers the hashes it touches in a lock file under
``locks/``; entries listed by a lock whose process is alive are never evicted.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import time
import uuid
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .errors import CircleKamError

log = logging.getLogger(__name__)


class CacheLockError(CircleKamError):
    pass


def kernel_key(spec, forms, grid, phase: float) -> str:
    h = hashlib.sha256()
    h.update(repr((spec.kind.value, spec.potential.terms, spec.period)).encode())
    h.update(repr((grid.n_space, grid.n_substeps, grid.winding_cap)).encode())
    h.update(repr(float(phase)).encode())
    for f in forms:
        h.update(b"#" + f.key())
    return h.hexdigest()


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class KernelCache:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "locks").mkdir(exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock_path = None
        self._referenced: set[str] = set()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.npz"

    def _write_lock(self) -> FileLock:
        return FileLock(str(self.root / ".write.lock"), timeout=60)

    def _register(self, key: str) -> None:
        if self._lock_path is None or key in self._referenced:
            return
        self._referenced.add(key)
        tmp = self._lock_path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"pid": os.getpid(), "keys": sorted(self._referenced)}))
        os.replace(tmp, self._lock_path)

    def __enter__(self):
        self._lock_path = self.root / "locks" / f"{os.getpid()}-{uuid.uuid4().hex}.json"
        self._referenced = set()
        self._lock_path.write_text(json.dumps({"pid": os.getpid(), "keys": []}))
        return self

    def __exit__(self, *exc):
        if self._lock_path is not None:
            self._lock_path.unlink(missing_ok=True)
            self._lock_path = None
        return False

    def load(self, key: str):
        path = self._path(key)
        try:
            with np.load(path, allow_pickle=False) as z:
                arrays = {k: z[k] for k in z.files}
        except (FileNotFoundError, OSError, ValueError):
            self.misses += 1
            return None
        self._register(key)
        try:
            os.utime(path)
        except OSError:
            pass
        self.hits += 1
        return arrays

    def store(self, key: str, arrays: dict) -> None:
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        path = self._path(key)
        self._register(key)
        with self._write_lock():
            tmp = path.with_name(f".{key}.{os.getpid()}.tmp")
            tmp.write_bytes(buf.getvalue())
            os.replace(tmp, path)


def _live_references(root: Path) -> set:
    keys = set()
    for lock in (root / "locks").glob("*.json"):
        try:
            data = json.loads(lock.read_text())
        except (OSError, ValueError):
            continue
        if _pid_alive(int(data.get("pid", -1))):
            keys.update(data.get("keys", []))
        else:
            lock.unlink(missing_ok=True)
    return keys


def cache_gc(cache_dir, max_bytes: int, retries: int = 3, timeout: float = 5.0) -> int:
    """Evict least recently used entries until the cache holds at most ``max_bytes``.

    Returns the number of bytes freed.  Entries referenced by a live run lock
    are kept even if that leaves the cache above budget.
    """
    root = Path(cache_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"cache directory {root} does not exist")
    (root / "locks").mkdir(exist_ok=True)
    lock = FileLock(str(root / ".write.lock"), timeout=timeout)
    for attempt in range(retries):
        try:
            lock.acquire()
            break
        except Timeout:
            log.warning("cache lock busy (attempt %d/%d)", attempt + 1, retries)
            time.sleep(0.1 * (attempt + 1))
    else:
        raise CacheLockError(f"could not acquire cache lock in {root} after {retries} attempts")
    try:
        live = _live_references(root)
        entries = []
        for p in root.glob("*.npz"):
            st = p.stat()
            entries.append((st.st_mtime, p.name, p, st.st_size))
        total = sum(e[3] for e in entries)
        freed = 0
        for _, _, p, size in sorted(entries):
            if total <= max_bytes:
                break
            if p.stem in live:
                continue
            p.unlink(missing_ok=True)
            total -= size
            freed += size
        return freed
    finally:
        lock.release()

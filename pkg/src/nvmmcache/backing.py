"""The slow tier: a file store whose writes are volatile until fsync.

Submitted writes land in an in-memory view (standing in for the OS page
cache).  ``fsync`` copies a file's pending ranges into its durable image and,
when the store has a root directory, into the real file under that root.
``crash`` throws away everything that was not fsynced.

Files are addressed by a small integer id handed out by the store.  The
id-to-path catalog is durable from the moment a file is created, the same way
an inode number outlives a crash, so logs that record ids stay replayable.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

CATALOG_NAME = ".catalog.json"


class StaleFileError(OSError):
    pass


class _File:
    __slots__ = ("path", "data", "durable", "pending")

    def __init__(self, path: str, data: bytes = b""):
        self.path = path
        self.data = bytearray(data)
        self.durable = bytearray(data)
        self.pending: list[tuple[int, int]] = []


class BackingStore:
    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else None
        self.fsync_counter = 0
        self.bytes_written_counter = 0
        self.bytes_read_counter = 0
        self.write_ops = 0
        self.read_ops = 0
        self.clock = None
        self._files: dict[int, _File] = {}
        self._ids: dict[str, int] = {}
        self._lock = threading.RLock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._load_root()

    @classmethod
    def from_images(cls, images: dict[str, bytes]) -> "BackingStore":
        """In-memory store whose files start out durable with ``images``."""
        store = cls()
        for path, data in images.items():
            store.add_file(path, data)
        return store

    def _load_root(self):
        catalog = self.root / CATALOG_NAME
        if catalog.exists():
            entries = json.loads(catalog.read_text())
            for path, fid in entries.items():
                disk = self.root / path
                data = disk.read_bytes() if disk.exists() else b""
                self._files[fid] = _File(path, data)
                self._ids[path] = fid
        for disk in sorted(self.root.rglob("*")):
            rel = disk.relative_to(self.root).as_posix()
            if disk.is_file() and rel != CATALOG_NAME and rel not in self._ids:
                if not rel.endswith(".tmp"):
                    self._register(rel, disk.read_bytes())
        self._write_catalog()

    def _write_catalog(self):
        if self.root is None:
            return
        tmp = self.root / (CATALOG_NAME + ".tmp")
        tmp.write_text(json.dumps(self._ids, sort_keys=True))
        os.replace(tmp, self.root / CATALOG_NAME)

    def _register(self, path: str, data: bytes) -> int:
        fid = len(self._ids) + 1
        self._files[fid] = _File(path, data)
        self._ids[path] = fid
        return fid

    # -- namespace -------------------------------------------------------

    def lookup(self, path: str) -> int | None:
        return self._ids.get(str(path))

    def create(self, path: str) -> int:
        path = str(path)
        with self._lock:
            if path in self._ids:
                return self._ids[path]
            fid = self._register(path, b"")
            if self.root is not None:
                disk = self.root / path
                disk.parent.mkdir(parents=True, exist_ok=True)
                disk.touch()
                self._write_catalog()
            return fid

    def add_file(self, path: str, data: bytes) -> int:
        """Create ``path`` with ``data`` already durable."""
        with self._lock:
            fid = self.create(path)
            f = self._files[fid]
            f.data[:] = data
            f.durable[:] = data
            f.pending.clear()
            if self.root is not None:
                (self.root / path).write_bytes(data)
            return fid

    def path_of(self, fid: int) -> str:
        return self._file(fid).path

    def file_ids(self) -> list[int]:
        return sorted(self._files)

    def _file(self, fid: int) -> _File:
        try:
            return self._files[fid]
        except KeyError:
            raise StaleFileError(f"no backing file with id {fid}") from None

    # -- data path -------------------------------------------------------

    def size(self, fid: int) -> int:
        return len(self._file(fid).data)

    def read(self, fid: int, offset: int, length: int) -> bytes:
        with self._lock:
            f = self._file(fid)
            self.read_ops += 1
            out = bytes(f.data[offset:offset + length])
            self.bytes_read_counter += len(out)
        if self.clock is not None:
            self.clock.charge("disk_read", length)
        return out

    def write(self, fid: int, offset: int, data) -> None:
        n = len(data)
        with self._lock:
            f = self._file(fid)
            end = offset + n
            if end > len(f.data):
                f.data.extend(bytes(end - len(f.data)))
            f.data[offset:end] = data
            f.pending.append((offset, end))
            self.write_ops += 1
            self.bytes_written_counter += n
        if self.clock is not None:
            self.clock.charge("disk_write", n)

    def fsync(self, fid: int) -> None:
        with self._lock:
            f = self._file(fid)
            self.fsync_counter += 1
            size = len(f.data)
            if len(f.durable) > size:
                del f.durable[size:]
            elif len(f.durable) < size:
                f.durable.extend(bytes(size - len(f.durable)))
            for start, end in f.pending:
                f.durable[start:end] = f.data[start:end]
            if self.root is not None and (f.pending or (self.root / f.path).stat().st_size != size):
                with open(self.root / f.path, "r+b") as disk:
                    for start, end in f.pending:
                        disk.seek(start)
                        disk.write(f.durable[start:end])
                    disk.truncate(size)
            f.pending.clear()
        if self.clock is not None:
            self.clock.charge("disk_fsync", 0)

    def crash(self) -> None:
        """Drop every write that was not fsynced."""
        with self._lock:
            for f in self._files.values():
                f.data = bytearray(f.durable)
                f.pending.clear()

    # -- inspection ------------------------------------------------------

    def contents(self, fid: int) -> bytes:
        return bytes(self._file(fid).data)

    def durable_contents(self, fid: int) -> bytes:
        return bytes(self._file(fid).durable)

    def durable_buffer(self, fid: int) -> bytearray:
        """The durable image itself, uncopied; callers must not mutate it."""
        return self._file(fid).durable

    def has_pending(self, fid: int | None = None) -> bool:
        if fid is None:
            return any(f.pending for f in self._files.values())
        return bool(self._file(fid).pending)

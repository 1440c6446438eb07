"""Shared lift cache: in-memory blocks plus an optional on-disk store.

Keys are SHA-256 over (spec content hash, block start address, raw block
bytes, optimizer version tag), so any spec or optimizer change invalidates
naturally.  Disk entries hold canonical IR text at
`<dir>/<first-2-hex>/<key>.ir`; writes are atomic (write-temp-then-rename)
and unreadable or corrupted entries are treated as misses and evicted.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
from typing import Optional

from . import ir

log = logging.getLogger(__name__)

OPTIMIZER_VERSION_TAG = "opt-1"


class LiftCache:
    """Thread-safe block cache shared among executor instances."""

    def __init__(self, disk_dir: Optional[str] = None):
        self._mem: dict[str, ir.IRBlock] = {}
        self._lock = threading.Lock()
        self.disk_dir = disk_dir
        self.hits = 0
        self.misses = 0
        self.saturation_calls = 0
        if disk_dir is not None:
            try:
                os.makedirs(disk_dir, exist_ok=True)
            except OSError as e:
                log.warning("cache directory unusable (%s); "
                            "falling back to memory-only", e)
                self.disk_dir = None

    def key_for(self, spec, address: int, raw_bytes: bytes,
                salt: str = "") -> str:
        h = hashlib.sha256()
        h.update(spec.content_hash.encode())
        h.update(address.to_bytes(8, "little"))
        h.update(raw_bytes)
        h.update(OPTIMIZER_VERSION_TAG.encode())
        h.update(salt.encode())
        return h.hexdigest()

    def _path(self, key: str) -> str:
        return os.path.join(self.disk_dir, key[:2], key + ".ir")

    def get(self, key: str, spec) -> Optional[ir.IRBlock]:
        with self._lock:
            block = self._mem.get(key)
        if block is not None:
            self.hits += 1
            return block
        if self.disk_dir is not None:
            path = self._path(key)
            try:
                with open(path, "r", encoding="utf-8") as f:
                    text = f.read()
            except OSError:
                text = None
            if text is not None:
                block = self._validate_entry(text, spec, path)
                if block is not None:
                    with self._lock:
                        self._mem[key] = block
                    self.hits += 1
                    return block
        self.misses += 1
        return None

    def _validate_entry(self, text: str, spec, path: str
                        ) -> Optional[ir.IRBlock]:
        """A disk entry counts only if it parses, validates, and re-renders
        byte-identically; anything else is corruption and gets evicted."""
        try:
            block = ir.parse_ir(text, spec)
            if ir.validate_block(block, spec):
                raise ValueError("invalid block")
            if ir.render_block(block, spec) != text:
                raise ValueError("render mismatch")
            return block
        except ValueError as e:
            log.warning("evicting corrupted cache entry %s (%s)", path, e)
            try:
                os.unlink(path)
            except OSError:
                pass
            return None

    def put(self, key: str, block: ir.IRBlock, spec) -> None:
        with self._lock:
            self._mem[key] = block
        if self.disk_dir is None:
            return
        path = self._path(key)
        tmp = path + f".tmp{os.getpid()}"
        try:
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(tmp, "w", encoding="utf-8") as f:
                f.write(ir.render_block(block, spec))
            os.replace(tmp, path)
        except OSError as e:
            log.warning("disk cache write failed (%s); "
                        "continuing memory-only", e)
            self.disk_dir = None

    def stats(self) -> dict[str, int]:
        return {"hits": self.hits, "misses": self.misses,
                "saturation_calls": self.saturation_calls}

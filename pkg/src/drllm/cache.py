"""Append-only on-disk response cache keyed by request fingerprint.

File layout, one entry after another::

    <decimal byte length>\\n<JSON object of that many bytes>\\n

The JSON object holds ``fp`` (fingerprint), ``text`` and ``ts``. A torn
final entry (crash mid-write) is ignored on load and overwritten by the
next append.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from pathlib import Path

from .backend import BackendResponse, request_fingerprint

logger = logging.getLogger(__name__)

__all__ = ["CachedBackend", "ResponseCache"]


class ResponseCache:
    def __init__(self, path, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self._index: dict[str, str] = {}
        self._lock = threading.Lock()
        self._good_size = 0
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        data = self.path.read_bytes()
        pos = 0
        while pos < len(data):
            nl = data.find(b"\n", pos)
            if nl < 0:
                break
            try:
                size = int(data[pos:nl])
            except ValueError:
                logger.warning("cache %s: corrupt length prefix at byte %d", self.path, pos)
                break
            start, end = nl + 1, nl + 1 + size
            if end + 1 > len(data) or data[end:end + 1] != b"\n":
                logger.warning("cache %s: truncated entry at byte %d ignored", self.path, pos)
                break
            entry = json.loads(data[start:end].decode("utf-8"))
            self._index.setdefault(entry["fp"], entry["text"])
            pos = end + 1
        self._good_size = pos

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self._index

    def get(self, fingerprint: str) -> str | None:
        return self._index.get(fingerprint)

    def put(self, fingerprint: str, text: str) -> None:
        """Append an entry unless the fingerprint is already cached."""
        payload = json.dumps(
            {"fp": fingerprint, "text": text, "ts": round(time.time(), 3)}, ensure_ascii=False
        ).encode("utf-8")
        record = str(len(payload)).encode() + b"\n" + payload + b"\n"
        with self._lock:
            if fingerprint in self._index:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("ab") as fh:
                if fh.tell() != self._good_size:
                    fh.truncate(self._good_size)
                    fh.seek(self._good_size)
                fh.write(record)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
            self._good_size += len(record)
            self._index[fingerprint] = text


class CachedBackend:
    """Wraps a backend so identical requests are answered from the cache.

    Concurrent misses on the same fingerprint are single-flight: one caller
    queries the backend, the others wait and then read its cached answer.
    """

    def __init__(self, backend, cache: ResponseCache | None):
        self.backend = backend
        self.cache = cache
        self.config = backend.config
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()
        self._inflight: dict[str, threading.Lock] = {}

    def _cached(self, fp: str) -> BackendResponse | None:
        text = self.cache.get(fp)
        if text is None:
            return None
        with self._lock:
            self.hits += 1
        return BackendResponse(text, 0.0, fp, cached=True)

    def complete(self, messages) -> BackendResponse:
        cfg = self.config
        if self.cache is None:
            resp = self.backend.complete(messages)
            with self._lock:
                self.misses += 1
            return resp
        fp = request_fingerprint(cfg.model_identity, messages, cfg.temperature)
        hit = self._cached(fp)
        if hit is not None:
            return hit
        with self._lock:
            gate = self._inflight.setdefault(fp, threading.Lock())
        with gate:
            hit = self._cached(fp)
            if hit is not None:
                return hit
            resp = self.backend.complete(messages)
            with self._lock:
                self.misses += 1
            self.cache.put(fp, resp.text)
        with self._lock:
            self._inflight.pop(fp, None)
        return resp

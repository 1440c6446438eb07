"""Analysis coordinator: message routing and the shared fact store.

One bounded inbox per device (drop-oldest with a diagnostic when full),
per-sender FIFO delivery, and a namespaced last-writer-wins fact store with
per-key atomicity.  Observers talk to the coordinator from their simulator
threads; inboxes are drained at instruction boundaries.
"""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

log = logging.getLogger(__name__)

DEFAULT_QUEUE_LIMIT = 4096


@dataclass
class Message:
    sender: str
    kind: str
    payload: object


class Coordinator:
    def __init__(self, queue_limit: int = DEFAULT_QUEUE_LIMIT):
        self._lock = threading.Lock()
        self._inboxes: dict[str, deque[Message]] = {}
        self._facts: dict[tuple[str, str], bytes] = {}
        self._stopped: set[str] = set()
        self.queue_limit = queue_limit
        self.dropped = 0
        self.diagnostics: list[str] = []

    # -- device registry --------------------------------------------------

    def register_device(self, name: str) -> None:
        with self._lock:
            self._inboxes.setdefault(name, deque())

    def mark_stopped(self, name: str) -> None:
        with self._lock:
            self._stopped.add(name)

    # -- message bus --------------------------------------------------------

    def route(self, message: Message, to: str) -> bool:
        """Per-sender FIFO; messages to stopped devices are dropped with a
        diagnostic."""
        with self._lock:
            inbox = self._inboxes.get(to)
            if inbox is None or to in self._stopped:
                self.diagnostics.append(
                    f"message {message.kind!r} from {message.sender} "
                    f"dropped: device {to!r} unavailable")
                self.dropped += 1
                return False
            if len(inbox) >= self.queue_limit:
                inbox.popleft()
                self.dropped += 1
                self.diagnostics.append(
                    f"inbox {to!r} overflow: oldest message dropped")
            inbox.append(message)
            return True

    def drain(self, name: str) -> list[Message]:
        with self._lock:
            inbox = self._inboxes.get(name)
            if not inbox:
                return []
            out = list(inbox)
            inbox.clear()
            return out

    # -- fact store ----------------------------------------------------------

    def fact_put(self, namespace: str, key: str, data: bytes) -> None:
        with self._lock:
            self._facts[(namespace, key)] = bytes(data)

    def fact_get(self, namespace: str, key: str) -> Optional[bytes]:
        with self._lock:
            return self._facts.get((namespace, key))

    def fact_keys(self, namespace: str) -> list[str]:
        with self._lock:
            return [k for (ns, k) in self._facts if ns == namespace]

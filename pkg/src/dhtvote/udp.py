"""Real UDP transport and the long-running node wrapper.

One receive thread demultiplexes the socket: inbound queries go to the
node's handler (serialized under the node lock), inbound responses are
matched to waiting requests by (address, transaction id).
"""

from __future__ import annotations

import logging
import socket
import threading
import time

from . import krpc
from .client import VoteResult, fetch_votes
from .node import Address, NodeConfig, VoteNode
from .store import Polarity

log = logging.getLogger(__name__)

_RECV_BUFFER = 2048


class UdpTransport:
    def __init__(self, bind: Address, timeout: float = 2.0, retries: int = 2):
        self.timeout = timeout
        self.retries = retries
        self.handler = None  # set by the runner before start()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(bind)
        self._sock.settimeout(0.2)
        self._pending: dict[tuple[Address, bytes], "_Waiter"] = {}
        self._lock = threading.Lock()
        self._running = False
        self._thread: threading.Thread | None = None

    @property
    def local_address(self) -> Address:
        return self._sock.getsockname()

    def start(self) -> None:
        self._running = True
        self._thread = threading.Thread(target=self._recv_loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self._sock.close()

    def request(self, address: Address, data: bytes, kind: str) -> bytes | None:
        try:
            tid = krpc.decode_message(data).tid
        except Exception:
            raise ValueError("request payload is not a KRPC message")
        key = (address, tid)
        waiter = _Waiter()
        with self._lock:
            self._pending[key] = waiter
        try:
            for _ in range(self.retries + 1):
                try:
                    self._sock.sendto(data, address)
                except OSError:
                    return None
                if waiter.event.wait(self.timeout):
                    return waiter.reply
            return None
        finally:
            with self._lock:
                self._pending.pop(key, None)

    def _recv_loop(self) -> None:
        while self._running:
            try:
                data, source = self._sock.recvfrom(_RECV_BUFFER)
            except socket.timeout:
                continue
            except OSError:
                break
            self._dispatch(data, source)

    def _dispatch(self, data: bytes, source: Address) -> None:
        try:
            message = krpc.decode_message(data)
        except Exception:
            return
        if isinstance(message, krpc.Query):
            if self.handler is None:
                return
            try:
                reply = self.handler(data, source)
            except Exception:
                log.exception("datagram handler failed")
                return
            if reply is not None:
                try:
                    self._sock.sendto(reply, source)
                except OSError:
                    pass
        else:
            with self._lock:
                waiter = self._pending.get((source, message.tid))
            if waiter is not None:
                waiter.reply = data if isinstance(message, krpc.Response) else None
                waiter.event.set()


class _Waiter:
    __slots__ = ("event", "reply")

    def __init__(self) -> None:
        self.event = threading.Event()
        self.reply: bytes | None = None


class UdpNodeRunner:
    """A VoteNode bound to a real socket, with periodic maintenance.

    All node-state access (inbound handlers, casts, announce rounds) is
    serialized through one lock, honoring the node's single-writer
    contract.
    """

    def __init__(self, config: NodeConfig, node_id: bytes | None = None):
        self.config = config
        self.transport = UdpTransport(
            config.bind, timeout=config.query_timeout, retries=config.query_retries
        )
        self.node = VoteNode(config, self.transport, node_id=node_id)
        self._lock = threading.RLock()
        self.transport.handler = self._handle
        self._stop = threading.Event()

    @property
    def local_address(self) -> Address:
        return self.transport.local_address

    def _handle(self, data: bytes, source: Address) -> bytes | None:
        with self._lock:
            return self.node.handle_datagram(data, source)

    def start(self) -> None:
        self.transport.start()
        with self._lock:
            self.node.bootstrap()

    def stop(self) -> None:
        self._stop.set()
        self.transport.stop()

    def cast_vote(self, info_hash: bytes, polarity: Polarity) -> str:
        with self._lock:
            return self.node.cast_vote(info_hash, polarity)

    def announce_round(self):
        with self._lock:
            return self.node.announce_round()

    def fetch_votes(self, info_hash: bytes) -> VoteResult:
        with self._lock:
            return fetch_votes(self.node, info_hash)

    def run_forever(self) -> None:
        """Block, announcing every announce_period and expiring hourly."""
        next_announce = time.time()  # announce immediately on startup
        next_expiry = time.time() + 3600
        while not self._stop.is_set():
            now = time.time()
            if now >= next_announce:
                try:
                    report = self.announce_round()
                except Exception:
                    log.exception("announce round failed")
                else:
                    delivered = sum(
                        ok for sends in report.values() for _, ok in sends
                    )
                    log.info(
                        "announce round: %d votes, %d deliveries",
                        len(report),
                        delivered,
                    )
                next_announce = now + self.config.announce_period
            if now >= next_expiry:
                with self._lock:
                    self.node.store.expire(now)
                next_expiry = now + 3600
            self._stop.wait(1.0)

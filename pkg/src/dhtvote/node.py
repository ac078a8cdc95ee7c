"""The voting DHT node: query handlers, tokens, journal, announce rounds.

The node core is transport-agnostic. A transport only has to provide
``request(address, data, kind) -> reply bytes or None`` (blocking, with its
own timeout/retry policy); both the real UDP transport and the simulator's
virtual network satisfy that. The clock is injectable for the same reason:
hour blocks, token rotation, and announce scheduling must all be testable
without waiting on wall time.

Incoming votes are always recorded against the observed UDP source IP,
never anything claimed in the message; the get_votes/announce_vote token
handshake exists to stop spoofed sources.
"""

from __future__ import annotations

import logging
import secrets
import socket
import time
from dataclasses import dataclass, field
from hashlib import sha1
from pathlib import Path
from typing import Callable, Protocol

from . import krpc
from .krpc import ProtocolError, Query, Response, ErrorMessage
from .routing import Contact, LookupFailedError, RoutingTable, iterative_lookup
from .store import Polarity, VoteStore, DEFAULT_MAX_KEYS

log = logging.getLogger(__name__)

TOKEN_ROTATION_SECONDS = 300  # previous secret stays valid one extra rotation
JOURNAL_FILENAME = "votes.log"

Address = tuple[str, int]
Clock = Callable[[], float]


class Transport(Protocol):
    def request(self, address: Address, data: bytes, kind: str) -> bytes | None: ...


@dataclass
class NodeConfig:
    bind: Address = ("0.0.0.0", 0)
    state_dir: str | None = None
    bootstrap: list[Address] = field(default_factory=list)
    k: int = 8
    alpha: int = 3
    announce_period: float = 1800.0  # must stay under one ring slot (1 h)
    max_keys: int = DEFAULT_MAX_KEYS
    query_timeout: float = 2.0
    query_retries: int = 2

    def __post_init__(self) -> None:
        if self.k < 1 or self.alpha < 1:
            raise ValueError("k and alpha must be at least 1")
        if not 0 < self.announce_period < 3600:
            raise ValueError("announce_period must be under one hour")


@dataclass
class LocalVote:
    info_hash: bytes
    polarity: Polarity
    created_at: int


def compact_address(address: Address) -> bytes:
    return socket.inet_aton(address[0]) + address[1].to_bytes(2, "big")


class TokenIssuer:
    """Rotating-secret announce tokens bound to the requester's address."""

    def __init__(self, clock: Clock, rand_bytes: Callable[[int], bytes] = secrets.token_bytes):
        self._clock = clock
        self._rand = rand_bytes
        self._current = rand_bytes(16)
        self._previous = self._current
        self._rotated_at = clock()

    def _rotate_if_due(self) -> None:
        now = self._clock()
        while now - self._rotated_at >= TOKEN_ROTATION_SECONDS:
            self._previous = self._current
            self._current = self._rand(16)
            self._rotated_at += TOKEN_ROTATION_SECONDS

    def issue(self, address: Address) -> bytes:
        self._rotate_if_due()
        return sha1(self._current + compact_address(address)).digest()[:8]

    def valid(self, token: bytes, address: Address) -> bool:
        self._rotate_if_due()
        compact = compact_address(address)
        for secret in (self._current, self._previous):
            if token == sha1(secret + compact).digest()[:8]:
                return True
        return False


class Journal:
    """Append-only record of this node's own votes.

    One line per vote: ``<40 hex info_hash>,<+1|-1>,<unix seconds>``. On
    load, the first record per info_hash wins; duplicates and malformed
    lines are logged and skipped.
    """

    def __init__(self, state_dir: str | Path):
        directory = Path(state_dir)
        directory.mkdir(parents=True, exist_ok=True)
        self.path = directory / JOURNAL_FILENAME

    def append(self, vote: LocalVote) -> None:
        sign = "+1" if vote.polarity is Polarity.POSITIVE else "-1"
        line = f"{vote.info_hash.hex()},{sign},{vote.created_at}\n"
        with open(self.path, "a", encoding="ascii") as fh:
            fh.write(line)

    def load(self) -> list[LocalVote]:
        if not self.path.exists():
            return []
        votes: dict[bytes, LocalVote] = {}
        with open(self.path, "r", encoding="ascii", errors="replace") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                vote = self._parse_line(line)
                if vote is None:
                    log.warning("%s:%d: malformed journal line skipped", self.path, lineno)
                elif vote.info_hash in votes:
                    log.warning("%s:%d: duplicate vote for %s ignored",
                                self.path, lineno, vote.info_hash.hex())
                else:
                    votes[vote.info_hash] = vote
        return list(votes.values())

    @staticmethod
    def _parse_line(line: str) -> LocalVote | None:
        parts = line.split(",")
        if len(parts) != 3:
            return None
        hex_hash, sign, stamp = parts
        if len(hex_hash) != 40 or sign not in ("+1", "-1") or not stamp.isdigit():
            return None
        try:
            info_hash = bytes.fromhex(hex_hash)
        except ValueError:
            return None
        polarity = Polarity.POSITIVE if sign == "+1" else Polarity.NEGATIVE
        return LocalVote(info_hash, polarity, int(stamp))


def vote_key(info_hash: bytes) -> bytes:
    """The DHT storage key: SHA1 of the document's info-hash."""
    return sha1(info_hash).digest()


class VoteNode:
    """Protocol logic for one DHT participant.

    Mutating entry points (handle_datagram, cast_vote, announce_round,
    bootstrap) must be serialized by the caller; the UDP runner funnels
    them through one lock, the simulator is single-threaded anyway.
    """

    def __init__(
        self,
        config: NodeConfig,
        transport: Transport,
        clock: Clock = time.time,
        rand_bytes: Callable[[int], bytes] = secrets.token_bytes,
        node_id: bytes | None = None,
    ):
        self.config = config
        self.transport = transport
        self.clock = clock
        self._rand = rand_bytes
        self.node_id = node_id if node_id is not None else rand_bytes(20)
        if len(self.node_id) != 20:
            raise ValueError("node id must be 20 bytes")
        self.routing = RoutingTable(self.node_id, k=config.k)
        self.store = VoteStore(max_keys=config.max_keys)
        self.tokens = TokenIssuer(clock, rand_bytes)
        self.journal = Journal(config.state_dir) if config.state_dir else None
        self.local_votes: dict[bytes, LocalVote] = {}
        if self.journal is not None:
            for vote in self.journal.load():
                self.local_votes[vote.info_hash] = vote

    # ------------------------------------------------------------------
    # server side

    def handle_datagram(self, data: bytes, source: Address) -> bytes | None:
        """Handle one inbound datagram; returns the reply or None to drop.

        Total: any byte sequence either yields a well-formed reply or is
        dropped, never an exception or malformed bencode.
        """
        try:
            message = krpc.decode_message(data)
        except Exception:
            return None  # not decodable; nothing sane to reply to
        if not isinstance(message, Query):
            return None  # unsolicited response/error
        try:
            reply = self.handle_query(message, source)
        except ProtocolError as exc:
            reply = ErrorMessage(message.tid, exc.code, str(exc))
        except Exception:
            log.exception("query handler failed")
            reply = ErrorMessage(message.tid, krpc.SERVER_ERROR, "internal error")
        return krpc.encode_message(reply)

    def handle_query(self, query: Query, source: Address) -> Response:
        fields = krpc.validate_query_args(query)
        sender_id = fields["id"]
        if sender_id != self.node_id:
            self.routing.insert(
                Contact(sender_id, source[0], source[1], last_seen=self.clock())
            )
        if query.method == "ping":
            return krpc.ping_response(query.tid, self.node_id)
        if query.method == "find_node":
            nodes = krpc.pack_contacts(self.routing.closest(fields["target"]))
            return krpc.find_node_response(query.tid, self.node_id, nodes)
        if query.method == "get_votes":
            return self._handle_get_votes(query.tid, fields["target"], source)
        assert query.method == "announce_vote"
        return self._handle_announce_vote(query.tid, fields, source)

    def _handle_get_votes(self, tid: bytes, target: bytes, source: Address) -> Response:
        token = self.tokens.issue(source)
        nodes = krpc.pack_contacts(self.routing.closest(target))
        vp = vn = None
        positive, negative = self.store.aggregate(target, self.clock())
        if not (positive.is_empty() and negative.is_empty()):
            vp = positive.to_bytes()
            vn = negative.to_bytes()
        return krpc.get_votes_response(tid, self.node_id, token, nodes, vp, vn)

    def _handle_announce_vote(self, tid: bytes, fields: dict, source: Address) -> Response:
        if not self.tokens.valid(fields["token"], source):
            raise ProtocolError("invalid or expired token")
        polarity = Polarity.POSITIVE if fields["vote"] == 1 else Polarity.NEGATIVE
        self.store.record(
            fields["target"], polarity, socket.inet_aton(source[0]), self.clock()
        )
        return krpc.announce_vote_response(tid, self.node_id)

    # ------------------------------------------------------------------
    # client side

    def _new_tid(self) -> bytes:
        return self._rand(2)

    def send_query(self, address: Address, query: Query) -> Response | None:
        """Send one query and wait; None on timeout or error reply."""
        raw = self.transport.request(address, krpc.encode_message(query), query.method)
        if raw is None:
            return None
        try:
            reply = krpc.decode_message(raw)
        except Exception:
            return None
        if not isinstance(reply, Response) or reply.tid != query.tid:
            return None
        return reply

    def _query_contact(self, contact: Contact, query: Query) -> Response | None:
        reply = self.send_query(contact.address, query)
        if reply is None:
            self.routing.note_failure(contact.id)
        else:
            self.routing.insert(
                Contact(contact.id, contact.ip, contact.port, last_seen=self.clock())
            )
        return reply

    def _find_node_fn(self, contact: Contact, target: bytes) -> list[Contact] | None:
        reply = self._query_contact(
            contact, krpc.find_node_query(self._new_tid(), self.node_id, target)
        )
        if reply is None:
            return None
        nodes = reply.values.get(b"nodes")
        if not isinstance(nodes, bytes):
            return None
        try:
            unpacked = krpc.unpack_contacts(nodes)
        except ProtocolError:
            return None
        return [
            Contact(nid, ip, port)
            for nid, ip, port in unpacked
            if nid != self.node_id
        ]

    def lookup(self, target: bytes) -> list[Contact]:
        """Iterative lookup of the k closest responsive contacts to target."""
        seeds = {c.id: c for c in self.routing.closest(target, self.config.k)}
        if not seeds:
            for address in self.config.bootstrap:
                probe = self._ping_address(address)
                if probe is not None:
                    seeds.setdefault(probe.id, probe)
        if not seeds:
            raise LookupFailedError("routing table empty and no bootstrap reachable")
        return iterative_lookup(
            target,
            seeds.values(),
            self._find_node_fn,
            k=self.config.k,
            alpha=self.config.alpha,
        )

    def _ping_address(self, address: Address) -> Contact | None:
        reply = self.send_query(address, krpc.ping_query(self._new_tid(), self.node_id))
        if reply is None:
            return None
        peer_id = reply.values.get(b"id")
        if not isinstance(peer_id, bytes) or len(peer_id) != 20 or peer_id == self.node_id:
            return None
        contact = Contact(peer_id, address[0], address[1], last_seen=self.clock())
        self.routing.insert(contact)
        return contact

    def bootstrap(self) -> int:
        """Join the network via the configured contacts; returns table size."""
        try:
            self.lookup(self.node_id)
        except LookupFailedError:
            pass
        return len(self.routing)

    def cast_vote(self, info_hash: bytes, polarity: Polarity, now: float | None = None) -> str:
        """Register this user's own vote; 'accepted' or 'already-voted'.

        A vote can be set once per document and is permanent.
        """
        if len(info_hash) != 20:
            raise ValueError("info-hash must be 20 bytes")
        if info_hash in self.local_votes:
            return "already-voted"
        vote = LocalVote(info_hash, polarity, int(self.clock() if now is None else now))
        if self.journal is not None:
            self.journal.append(vote)
        self.local_votes[info_hash] = vote
        return "accepted"

    def announce_vote_to(self, contact: Contact, key: bytes, vote_value: int) -> bool:
        """get_votes for a token, then announce_vote; True on success."""
        reply = self._query_contact(
            contact, krpc.get_votes_query(self._new_tid(), self.node_id, key)
        )
        if reply is None:
            return False
        token = reply.values.get(b"token")
        if not isinstance(token, bytes) or not token:
            return False
        reply = self._query_contact(
            contact,
            krpc.announce_vote_query(self._new_tid(), self.node_id, key, vote_value, token),
        )
        return reply is not None

    def announce_round(self, now: float | None = None) -> dict[bytes, list[tuple[Contact, bool]]]:
        """Announce every local vote to the k nodes nearest its key.

        Returns, per info-hash, the contacted replicas and whether each
        announce succeeded; a failed lookup leaves an empty list and the
        vote is simply retried next round.
        """
        report: dict[bytes, list[tuple[Contact, bool]]] = {}
        for info_hash, vote in self.local_votes.items():
            key = vote_key(info_hash)
            try:
                contacts = self.lookup(key)
            except LookupFailedError:
                report[info_hash] = []
                continue
            deliveries = []
            for contact in contacts:
                ok = self.announce_vote_to(contact, key, vote.polarity.value)
                deliveries.append((contact, ok))
            report[info_hash] = deliveries
        return report

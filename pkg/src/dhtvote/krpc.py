"""KRPC message formats: ping, find_node, get_votes, announce_vote.

Envelope follows Mainline conventions: a bencoded dict with a transaction
id ``t``, a kind ``y`` (q / r / e), and either ``q``+``a`` (query), ``r``
(response values), or ``e`` (error [code, message]). Contacts travel in
compact form, 26 bytes each: 20-byte id, 4-byte IPv4, 2-byte big-endian
port.

The two voting methods:

  get_votes      args {id, target};
                 response {id, token, nodes[, vp, vn]} where vp/vn are the
                 256-byte positive/negative sketches, present only when the
                 responder actually stores votes for the target.
  announce_vote  args {id, target, vote (1 or -1), token};
                 response {id}.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass, field

from . import bencode
from .sketch import REGISTER_COUNT

ID_LENGTH = 20
COMPACT_CONTACT_LENGTH = 26

# Mainline error codes
GENERIC_ERROR = 201
SERVER_ERROR = 202
PROTOCOL_ERROR = 203
METHOD_UNKNOWN = 204

METHODS = ("ping", "find_node", "get_votes", "announce_vote")


class ProtocolError(Exception):
    """Invalid message content; maps to a KRPC error reply."""

    def __init__(self, message: str, code: int = PROTOCOL_ERROR):
        super().__init__(message)
        self.code = code


@dataclass
class Query:
    tid: bytes
    method: str
    args: dict[bytes, object] = field(default_factory=dict)


@dataclass
class Response:
    tid: bytes
    values: dict[bytes, object] = field(default_factory=dict)


@dataclass
class ErrorMessage:
    tid: bytes
    code: int
    message: str


KrpcMessage = Query | Response | ErrorMessage


def encode_message(msg: KrpcMessage) -> bytes:
    if isinstance(msg, Query):
        payload = {b"t": msg.tid, b"y": b"q", b"q": msg.method.encode(), b"a": msg.args}
    elif isinstance(msg, Response):
        payload = {b"t": msg.tid, b"y": b"r", b"r": msg.values}
    elif isinstance(msg, ErrorMessage):
        payload = {b"t": msg.tid, b"y": b"e", b"e": [msg.code, msg.message.encode()]}
    else:
        raise TypeError(f"not a KRPC message: {type(msg).__name__}")
    return bencode.encode(payload)


def decode_message(data: bytes) -> KrpcMessage:
    """Parse a datagram into a message; raises ProtocolError / BencodeError."""
    payload = bencode.decode(data)
    if not isinstance(payload, dict):
        raise ProtocolError("datagram is not a dict")
    tid = payload.get(b"t")
    if not isinstance(tid, bytes) or not tid:
        raise ProtocolError("missing transaction id")
    kind = payload.get(b"y")
    if kind == b"q":
        method = payload.get(b"q")
        args = payload.get(b"a")
        if not isinstance(method, bytes):
            raise ProtocolError("query without method name")
        if not isinstance(args, dict):
            raise ProtocolError("query without arguments dict")
        return Query(tid, method.decode("ascii", "replace"), args)
    if kind == b"r":
        values = payload.get(b"r")
        if not isinstance(values, dict):
            raise ProtocolError("response without values dict")
        return Response(tid, values)
    if kind == b"e":
        err = payload.get(b"e")
        if (
            not isinstance(err, list)
            or len(err) != 2
            or not isinstance(err[0], int)
            or not isinstance(err[1], bytes)
        ):
            raise ProtocolError("malformed error payload")
        return ErrorMessage(tid, err[0], err[1].decode("utf-8", "replace"))
    raise ProtocolError("unknown message kind")


# ---------------------------------------------------------------------------
# compact contact encoding


def pack_contacts(contacts) -> bytes:
    """Contacts -> concatenated 26-byte compact entries."""
    out = bytearray()
    for c in contacts:
        out += c.id
        out += socket.inet_aton(c.ip)
        out += c.port.to_bytes(2, "big")
    return bytes(out)


def unpack_contacts(data: bytes) -> list[tuple[bytes, str, int]]:
    """Compact node bytes -> list of (id, ip, port)."""
    if len(data) % COMPACT_CONTACT_LENGTH != 0:
        raise ProtocolError("compact node info not a multiple of 26 bytes")
    out = []
    for i in range(0, len(data), COMPACT_CONTACT_LENGTH):
        entry = data[i : i + COMPACT_CONTACT_LENGTH]
        out.append(
            (
                entry[:20],
                socket.inet_ntoa(entry[20:24]),
                int.from_bytes(entry[24:26], "big"),
            )
        )
    return out


# ---------------------------------------------------------------------------
# query builders


def ping_query(tid: bytes, node_id: bytes) -> Query:
    return Query(tid, "ping", {b"id": node_id})


def find_node_query(tid: bytes, node_id: bytes, target: bytes) -> Query:
    return Query(tid, "find_node", {b"id": node_id, b"target": target})


def get_votes_query(tid: bytes, node_id: bytes, target: bytes) -> Query:
    return Query(tid, "get_votes", {b"id": node_id, b"target": target})


def announce_vote_query(
    tid: bytes, node_id: bytes, target: bytes, vote: int, token: bytes
) -> Query:
    return Query(
        tid,
        "announce_vote",
        {b"id": node_id, b"target": target, b"vote": vote, b"token": token},
    )


# ---------------------------------------------------------------------------
# response builders


def ping_response(tid: bytes, node_id: bytes) -> Response:
    return Response(tid, {b"id": node_id})


def find_node_response(tid: bytes, node_id: bytes, nodes: bytes) -> Response:
    return Response(tid, {b"id": node_id, b"nodes": nodes})


def get_votes_response(
    tid: bytes,
    node_id: bytes,
    token: bytes,
    nodes: bytes,
    vp: bytes | None = None,
    vn: bytes | None = None,
) -> Response:
    values: dict[bytes, object] = {b"id": node_id, b"token": token, b"nodes": nodes}
    if vp is not None:
        values[b"vp"] = vp
    if vn is not None:
        values[b"vn"] = vn
    return Response(tid, values)


def announce_vote_response(tid: bytes, node_id: bytes) -> Response:
    return Response(tid, {b"id": node_id})


# ---------------------------------------------------------------------------
# argument validation (server side)


def _require_bytes(args: dict, key: bytes, length: int | None = None) -> bytes:
    value = args.get(key)
    if not isinstance(value, bytes):
        raise ProtocolError(f"missing or non-string {key.decode()!r}")
    if length is not None and len(value) != length:
        raise ProtocolError(
            f"{key.decode()!r} must be {length} bytes, got {len(value)}"
        )
    return value


def validate_query_args(query: Query) -> dict[str, object]:
    """Check a query's arguments; returns the typed fields it carries."""
    args = query.args
    fields: dict[str, object] = {"id": _require_bytes(args, b"id", ID_LENGTH)}
    if query.method == "ping":
        return fields
    if query.method == "find_node" or query.method == "get_votes":
        fields["target"] = _require_bytes(args, b"target", ID_LENGTH)
        return fields
    if query.method == "announce_vote":
        fields["target"] = _require_bytes(args, b"target", ID_LENGTH)
        vote = args.get(b"vote")
        if not isinstance(vote, int) or vote not in (1, -1):
            raise ProtocolError("vote must be 1 or -1")
        fields["vote"] = vote
        token = args.get(b"token")
        if not isinstance(token, bytes) or not token:
            raise ProtocolError("missing announce token")
        fields["token"] = token
        return fields
    raise ProtocolError(f"unknown method {query.method!r}", METHOD_UNKNOWN)


def response_sketches(values: dict) -> tuple[bytes | None, bytes | None]:
    """Extract the optional vp/vn sketch bytes from get_votes response values."""
    out = []
    for key in (b"vp", b"vn"):
        blob = values.get(key)
        if blob is None:
            out.append(None)
        elif isinstance(blob, bytes) and len(blob) == REGISTER_COUNT:
            out.append(blob)
        else:
            raise ProtocolError(f"malformed {key.decode()} sketch")
    return out[0], out[1]

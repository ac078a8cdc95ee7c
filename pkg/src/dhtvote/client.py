"""Vote retrieval: query the replica set, then combine with spam filtering.

A single replica returning an inflated sketch would dominate a plain
per-register max, so with three or more replicas the combiner takes the
per-register lower median instead. Up to floor((n-1)/2) corrupt replicas
then cannot move the result away from the honest value when the honest
replicas agree. The trade-off: a replica that is legitimately ahead of its
peers gets partially discounted until re-announces converge them again.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import krpc
from .node import VoteNode, vote_key
from .routing import LookupFailedError
from .sketch import HllSketch


@dataclass
class VoteResult:
    info_hash: bytes
    positive_count: int
    negative_count: int
    responders: int  # replicas that answered get_votes
    queried: int  # replicas asked
    filtered: bool  # True when the robust combiner (vs plain merge) ran

    @property
    def no_data(self) -> bool:
        return self.responders == 0


def robust_combine(sketches: list[HllSketch]) -> HllSketch:
    """Combine replica sketches; lower median per register when n >= 3.

    With fewer than three replicas a median cannot outvote anything, so
    the plain union (per-register max) is used instead. Deterministic for
    any input order.
    """
    if not sketches:
        raise ValueError("no sketches to combine")
    length = len(sketches[0].registers)
    if any(len(s.registers) != length for s in sketches):
        raise ValueError("precision mismatch")
    if len(sketches) < 3:
        combined = sketches[0]
        for sketch in sketches[1:]:
            combined = combined.merge(sketch)
        return combined.copy()
    mid = (len(sketches) - 1) // 2
    registers = bytes(
        sorted(values)[mid] for values in zip(*(s.registers for s in sketches))
    )
    return HllSketch(registers)


def _max_combine(sketches: list[HllSketch]) -> HllSketch:
    combined = sketches[0]
    for sketch in sketches[1:]:
        combined = combined.merge(sketch)
    return combined.copy()


def fetch_votes(node: VoteNode, info_hash: bytes, combiner: str = "median") -> VoteResult:
    """Look up the replica set for info_hash and aggregate its vote counts.

    ``combiner`` is "median" (default, spam-filtered) or "max" (plain
    union; exists so the filter's effect can be measured).
    """
    if combiner not in ("median", "max"):
        raise ValueError(f"unknown combiner {combiner!r}")
    key = vote_key(info_hash)
    try:
        contacts = node.lookup(key)
    except LookupFailedError:
        return VoteResult(info_hash, 0, 0, 0, 0, False)

    positives: list[HllSketch] = []
    negatives: list[HllSketch] = []
    responders = 0
    for contact in contacts:
        reply = node._query_contact(
            contact, krpc.get_votes_query(node._new_tid(), node.node_id, key)
        )
        if reply is None:
            continue
        responders += 1
        try:
            vp, vn = krpc.response_sketches(reply.values)
        except krpc.ProtocolError:
            continue
        if vp is None and vn is None:
            continue  # replica holds nothing for this key
        # Lenient parse: out-of-range registers are the combiner's problem,
        # rejecting them here would let a spam replica mute itself selectively.
        positives.append(
            HllSketch.from_bytes(vp, validate=False) if vp is not None else HllSketch()
        )
        negatives.append(
            HllSketch.from_bytes(vn, validate=False) if vn is not None else HllSketch()
        )

    filtered = combiner == "median" and len(positives) >= 3
    combine = robust_combine if combiner == "median" else _max_combine
    positive_count = round(combine(positives).estimate()) if positives else 0
    negative_count = round(combine(negatives).estimate()) if negatives else 0
    return VoteResult(
        info_hash, positive_count, negative_count, responders, len(contacts), filtered
    )

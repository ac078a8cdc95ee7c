"""HyperLogLog distinct counter used for the positive and negative vote tallies.

One sketch counts distinct voter IPs for one polarity. The layout is fixed
network-wide: 256 one-byte registers (precision 8), items hashed with SHA1.
Index = first digest byte; rank = leading zeros of the next 32 bits, plus one.
Every node must produce identical registers for identical voter sets or
replica sketches would not union correctly, so none of this is configurable.

Two sketches (positive + negative) serialize to 512 bytes total, which keeps
a full get_votes response inside a single UDP datagram.
"""

from __future__ import annotations

import math
from hashlib import sha1

PRECISION_BITS = 8
REGISTER_COUNT = 1 << PRECISION_BITS  # 256
MAX_RANK = 33  # 32 hashed bits, all zero -> rank 33

_ALPHA = 0.7213 / (1 + 1.079 / REGISTER_COUNT)
_TWO_POW_32 = 1 << 32
# 2^-r for any byte value; wire-lenient sketches may carry registers above 33.
_INV_POW2 = tuple(2.0 ** -r for r in range(256))


class MalformedSketchError(ValueError):
    """Serialized sketch has the wrong length or an out-of-range register."""


class HllSketch:
    """Mergeable distinct-count sketch over byte-string items.

    Value semantics: ``merge`` returns a new sketch, ``add`` mutates in
    place and only ever grows registers.
    """

    __slots__ = ("registers",)

    def __init__(self, registers: bytearray | bytes | None = None):
        if registers is None:
            self.registers = bytearray(REGISTER_COUNT)
        else:
            if len(registers) != REGISTER_COUNT:
                raise MalformedSketchError(
                    f"expected {REGISTER_COUNT} registers, got {len(registers)}"
                )
            self.registers = bytearray(registers)

    def add(self, item: bytes) -> None:
        """Record one item (a voter's 4-byte IPv4 address, in this protocol)."""
        if not item:
            raise ValueError("cannot add an empty item")
        digest = sha1(item).digest()
        index = digest[0]
        w = int.from_bytes(digest[1:5], "big")
        rank = MAX_RANK - w.bit_length()  # leading zeros of 32-bit w, plus 1
        if rank > self.registers[index]:
            self.registers[index] = rank

    def estimate(self) -> float:
        """Cardinality estimate with small- and large-range corrections."""
        m = REGISTER_COUNT
        inv = _INV_POW2
        harmonic = 0.0
        for r in self.registers:
            harmonic += inv[r]
        raw = _ALPHA * m * m / harmonic
        zeros = self.registers.count(0)
        if raw <= 2.5 * m and zeros > 0:
            return m * math.log(m / zeros)
        if raw > _TWO_POW_32 / 30:
            if raw >= _TWO_POW_32:
                # Correction formula is undefined here; only reachable with
                # wire-lenient (adversarial) registers. Report the raw value.
                return raw
            return -_TWO_POW_32 * math.log(1.0 - raw / _TWO_POW_32)
        return raw

    def merge(self, other: "HllSketch") -> "HllSketch":
        """Union of two sketches: per-register max."""
        if len(other.registers) != len(self.registers):
            raise ValueError("precision mismatch")
        return HllSketch(bytes(map(max, self.registers, other.registers)))

    def to_bytes(self) -> bytes:
        """256 register bytes in index order; used verbatim on the wire."""
        return bytes(self.registers)

    @classmethod
    def from_bytes(cls, data: bytes, validate: bool = True) -> "HllSketch":
        """Inverse of :meth:`to_bytes`.

        With ``validate`` (the default) any register above MAX_RANK is
        rejected. The client's replica-fetch path disables validation and
        relies on the robust combiner instead, so a spam replica cannot get
        its whole response discarded while still poisoning a plain merge.
        """
        if len(data) != REGISTER_COUNT:
            raise MalformedSketchError(
                f"expected {REGISTER_COUNT} bytes, got {len(data)}"
            )
        if validate and any(b > MAX_RANK for b in data):
            raise MalformedSketchError("register value exceeds maximum rank")
        return cls(data)

    def copy(self) -> "HllSketch":
        return HllSketch(self.registers)

    def is_empty(self) -> bool:
        return not any(self.registers)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HllSketch):
            return NotImplemented
        return self.registers == other.registers

    def __repr__(self) -> str:
        return f"HllSketch(estimate~{self.estimate():.1f})"

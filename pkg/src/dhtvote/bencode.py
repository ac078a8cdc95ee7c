"""Strict bencode codec.

Values are ints, byte strings, lists, and dicts with byte-string keys.
Encoding is canonical (dict keys sorted); decoding rejects anything
non-canonical: trailing bytes, leading zeros in integers and string
lengths, negative zero, and unsorted or duplicate dict keys. Errors carry
the byte offset where decoding failed.
"""

from __future__ import annotations

BencodeValue = int | bytes | list | dict


class BencodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


def encode(value: BencodeValue) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: BencodeValue, out: bytearray) -> None:
    if isinstance(value, bool):
        raise TypeError("bool is not a bencode value")
    if isinstance(value, int):
        out += b"i%de" % value
    elif isinstance(value, (bytes, bytearray, memoryview)):
        value = bytes(value)
        out += b"%d:" % len(value)
        out += value
    elif isinstance(value, list):
        out += b"l"
        for item in value:
            _encode_into(item, out)
        out += b"e"
    elif isinstance(value, dict):
        out += b"d"
        for key in sorted(value):
            if not isinstance(key, bytes):
                raise TypeError(f"dict keys must be bytes, got {type(key).__name__}")
            _encode_into(key, out)
            _encode_into(value[key], out)
        out += b"e"
    else:
        raise TypeError(f"cannot bencode {type(value).__name__}")


def decode(data: bytes) -> BencodeValue:
    if not data:
        raise BencodeError("empty input", 0)
    value, end = _decode_at(data, 0, depth=0)
    if end != len(data):
        raise BencodeError("trailing bytes after value", end)
    return value


_MAX_DEPTH = 32  # fuzz inputs must not recurse the interpreter to death


def _decode_at(data: bytes, pos: int, depth: int) -> tuple[BencodeValue, int]:
    if depth > _MAX_DEPTH:
        raise BencodeError("nesting too deep", pos)
    if pos >= len(data):
        raise BencodeError("truncated input", pos)
    lead = data[pos]
    if lead == 0x69:  # 'i'
        return _decode_int(data, pos)
    if 0x30 <= lead <= 0x39:  # digit
        return _decode_string(data, pos)
    if lead == 0x6C:  # 'l'
        items = []
        cursor = pos + 1
        while True:
            if cursor >= len(data):
                raise BencodeError("unterminated list", cursor)
            if data[cursor] == 0x65:  # 'e'
                return items, cursor + 1
            item, cursor = _decode_at(data, cursor, depth + 1)
            items.append(item)
    if lead == 0x64:  # 'd'
        mapping: dict[bytes, BencodeValue] = {}
        cursor = pos + 1
        previous_key: bytes | None = None
        while True:
            if cursor >= len(data):
                raise BencodeError("unterminated dict", cursor)
            if data[cursor] == 0x65:
                return mapping, cursor + 1
            key_pos = cursor
            key, cursor = _decode_at(data, cursor, depth + 1)
            if not isinstance(key, bytes):
                raise BencodeError("dict key is not a byte string", key_pos)
            if previous_key is not None and key <= previous_key:
                raise BencodeError("dict keys not strictly ascending", key_pos)
            previous_key = key
            mapping[key], cursor = _decode_at(data, cursor, depth + 1)
    raise BencodeError(f"unexpected byte {lead:#04x}", pos)


def _decode_int(data: bytes, pos: int) -> tuple[int, int]:
    end = data.find(b"e", pos + 1)
    if end < 0:
        raise BencodeError("unterminated integer", pos)
    digits = data[pos + 1 : end]
    body = digits[1:] if digits[:1] == b"-" else digits
    if not body.isdigit():
        raise BencodeError("malformed integer", pos)
    if body != b"0" and body[:1] == b"0":
        raise BencodeError("integer has leading zero", pos)
    if digits == b"-0":
        raise BencodeError("negative zero", pos)
    return int(digits), end + 1


def _decode_string(data: bytes, pos: int) -> tuple[bytes, int]:
    colon = data.find(b":", pos)
    if colon < 0:
        raise BencodeError("unterminated string length", pos)
    length_digits = data[pos:colon]
    if not length_digits.isdigit():
        raise BencodeError("malformed string length", pos)
    if length_digits != b"0" and length_digits[:1] == b"0":
        raise BencodeError("string length has leading zero", pos)
    length = int(length_digits)
    end = colon + 1 + length
    if end > len(data):
        raise BencodeError("string runs past end of input", pos)
    return data[colon + 1 : end], end

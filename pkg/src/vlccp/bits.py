"""Bitstring helpers.

A bitstring is a 1-D ``numpy.uint8`` array holding 0/1 values, MSB first.
"""

from __future__ import annotations

import numpy as np


def as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if arr.size and arr.max() > 1:
        raise ValueError("bitstring values must be 0 or 1")
    return arr


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Big-endian bits of a non-negative integer in exactly ``width`` bits."""
    if value < 0 or value >> width:
        raise ValueError(f"{value} does not fit in {width} bits")
    if width == 0:
        return np.zeros(0, dtype=np.uint8)
    nbytes = (width + 7) // 8
    raw = np.frombuffer(value.to_bytes(nbytes, "big"), dtype=np.uint8)
    return np.unpackbits(raw)[nbytes * 8 - width:]


def bits_to_int(bits) -> int:
    bits = as_bits(bits)
    if bits.size == 0:
        return 0
    pad = (-bits.size) % 8
    packed = np.packbits(np.concatenate([np.zeros(pad, np.uint8), bits]))
    return int.from_bytes(packed.tobytes(), "big")


def bits_to_bytes(bits) -> bytes:
    """Zero-pad to a byte boundary at the end and pack big-endian."""
    return np.packbits(as_bits(bits)).tobytes()


def bytes_to_bits(data: bytes, nbits: int | None = None) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))
    if nbits is not None:
        if nbits > bits.size:
            raise ValueError(f"asked for {nbits} bits from {len(data)} bytes")
        bits = bits[:nbits]
    return bits


def to_hex(bits) -> str:
    return bits_to_bytes(bits).hex()


def from_hex(text: str, nbits: int | None = None) -> np.ndarray:
    return bytes_to_bits(bytes.fromhex(text.strip()), nbits)


def hamming(a, b) -> int:
    a, b = as_bits(a), as_bits(b)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} != {b.size}")
    return int(np.count_nonzero(a != b))

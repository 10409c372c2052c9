"""Compact Collective Perception Message codec.

Layout (MSB first within each field, no alignment between fields)::

    psid                16   header
    generation_time     64
    protocol_version     8   ITS PDU header
    message_id           8
    station_id          32
    latitude            32   management container (signed, 0.1 microdegree)
    longitude           32
    reference_time      16
    n x perceived object 74  x16 y16 vx15 vy15 delta_t12
    mac                 64   truncated HMAC-SHA256 over all preceding bits

Total length is ``272 + 74 * n`` bits.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field, replace

import numpy as np

from .bits import as_bits, bits_to_bytes, bits_to_int, bytes_to_bits, int_to_bits

KEY_BYTES = 16
MAC_BITS = 64
BASE_BITS = 272
OBJECT_BITS = 74
MAX_OBJECTS = 255

ETSI_BASE_BITS = 1560
ETSI_ITEM_BITS = 280

# Demo pre-shared key; real deployments load theirs from configuration.
DEFAULT_KEY = bytes(range(16))

MAX_LATITUDE = 900_000_000
MAX_LONGITUDE = 1_800_000_000


class CpmError(ValueError):
    pass


class CpmRangeError(CpmError):
    """A field value does not fit its declared width or range."""

    def __init__(self, name: str, value, lo: int, hi: int):
        super().__init__(f"{name}={value} outside [{lo}, {hi}]")
        self.field = name
        self.value = value
        self.lo = lo
        self.hi = hi


class FramingError(CpmError):
    pass


class AuthenticationError(CpmError):
    pass


@dataclass(frozen=True)
class CpmHeader:
    psid: int
    generation_time: int  # microseconds since the configured epoch


@dataclass(frozen=True)
class ItsPduHeader:
    protocol_version: int
    message_id: int
    station_id: int


@dataclass(frozen=True)
class ManagementContainer:
    latitude: int  # 0.1 microdegree
    longitude: int
    reference_time: int  # ms, modulo 2**16


@dataclass(frozen=True)
class PerceivedObject:
    x: int  # 0.1 m east of the reference position
    y: int  # 0.1 m north
    vx: int  # 0.01 m/s
    vy: int
    delta_t: int  # ms between sensing and generation_time


@dataclass(frozen=True)
class CollectivePerceptionMessage:
    header: CpmHeader
    pdu: ItsPduHeader
    management: ManagementContainer
    objects: tuple[PerceivedObject, ...] = ()
    mac: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))


def reference_time_for(generation_time_us: int) -> int:
    return (generation_time_us // 1000) % (1 << 16)


def _unsigned(width):
    return 0, (1 << width) - 1


def _signed(width):
    return -(1 << (width - 1)), (1 << (width - 1)) - 1


# (name, width, signed, (lo, hi)) in wire order
_FIXED_FIELDS = (
    ("header.psid", 16, False, _unsigned(16)),
    ("header.generation_time", 64, False, _unsigned(64)),
    ("pdu.protocol_version", 8, False, _unsigned(8)),
    ("pdu.message_id", 8, False, _unsigned(8)),
    ("pdu.station_id", 32, False, _unsigned(32)),
    ("management.latitude", 32, True, (-MAX_LATITUDE, MAX_LATITUDE)),
    ("management.longitude", 32, True, (-MAX_LONGITUDE, MAX_LONGITUDE)),
    ("management.reference_time", 16, False, _unsigned(16)),
)

_OBJECT_FIELDS = (
    ("x", 16, True, _signed(16)),
    ("y", 16, True, _signed(16)),
    ("vx", 15, True, _signed(15)),
    ("vy", 15, True, _signed(15)),
    ("delta_t", 12, False, _unsigned(12)),
)

assert sum(f[1] for f in _FIXED_FIELDS) + MAC_BITS == BASE_BITS
assert sum(f[1] for f in _OBJECT_FIELDS) == OBJECT_BITS


def cpm_size_bits(n: int) -> int:
    return BASE_BITS + OBJECT_BITS * n


def cpm_size_bytes(n: int) -> int:
    return (cpm_size_bits(n) + 7) // 8


def etsi_cpm_size_bits(n: int, m: int) -> int:
    """Size of the ETSI CPM with ``n`` perceived objects and ``m`` sensors."""
    return ETSI_BASE_BITS + ETSI_ITEM_BITS * (m + n)


def _check_key(key: bytes) -> bytes:
    key = bytes(key)
    if len(key) != KEY_BYTES:
        raise ValueError(f"key must be {KEY_BYTES * 8} bits, got {len(key) * 8}")
    return key


def compute_mac(payload, key: bytes) -> int:
    """64-bit tag: leading bits of HMAC-SHA256 over the zero-padded payload."""
    digest = hmac.new(_check_key(key), bits_to_bytes(payload), hashlib.sha256).digest()
    return int.from_bytes(digest[: MAC_BITS // 8], "big")


def _field_value(msg: CollectivePerceptionMessage, dotted: str):
    part, attr = dotted.split(".")
    return getattr(getattr(msg, part), attr)


def _check(name, value, lo, hi):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise CpmRangeError(name, value, lo, hi)
    if not lo <= value <= hi:
        raise CpmRangeError(name, value, lo, hi)
    return int(value)


def _body_int(msg: CollectivePerceptionMessage) -> tuple[int, int]:
    if len(msg.objects) > MAX_OBJECTS:
        raise CpmRangeError("objects", len(msg.objects), 0, MAX_OBJECTS)
    acc = 0
    nbits = 0
    for name, width, _, (lo, hi) in _FIXED_FIELDS:
        value = _check(name, _field_value(msg, name), lo, hi)
        acc = (acc << width) | (value & ((1 << width) - 1))
        nbits += width
    for i, obj in enumerate(msg.objects):
        for name, width, _, (lo, hi) in _OBJECT_FIELDS:
            value = _check(f"objects[{i}].{name}", getattr(obj, name), lo, hi)
            acc = (acc << width) | (value & ((1 << width) - 1))
            nbits += width
    return acc, nbits


def encode_cpm(msg: CollectivePerceptionMessage, key: bytes = DEFAULT_KEY) -> np.ndarray:
    """Encode to a bitstring of length ``272 + 74 * n``; ``msg.mac`` is ignored."""
    acc, nbits = _body_int(msg)
    body = int_to_bits(acc, nbits)
    tag = compute_mac(body, key)
    return np.concatenate([body, int_to_bits(tag, MAC_BITS)])


def _object_count(nbits: int) -> int:
    if nbits < BASE_BITS or (nbits - BASE_BITS) % OBJECT_BITS:
        raise FramingError(f"{nbits} bits is not of the form 272 + 74n")
    n = (nbits - BASE_BITS) // OBJECT_BITS
    if n > MAX_OBJECTS:
        raise FramingError(f"{n} objects exceeds the limit of {MAX_OBJECTS}")
    return n


def _to_signed(value: int, width: int) -> int:
    return value - (1 << width) if value >> (width - 1) else value


def decode_cpm(bits, key: bytes = DEFAULT_KEY) -> CollectivePerceptionMessage:
    bits = as_bits(bits)
    n = _object_count(bits.size)
    body, tag_bits = bits[:-MAC_BITS], bits[-MAC_BITS:]
    tag = bits_to_int(tag_bits)
    expected = compute_mac(body, key)
    if not hmac.compare_digest(tag.to_bytes(8, "big"), expected.to_bytes(8, "big")):
        raise AuthenticationError("MAC mismatch")

    acc = bits_to_int(body)
    pos = body.size

    def take(width, signed):
        nonlocal pos
        pos -= width
        raw = (acc >> pos) & ((1 << width) - 1)
        return _to_signed(raw, width) if signed else raw

    values = {name: take(width, signed) for name, width, signed, _ in _FIXED_FIELDS}
    objects = []
    for _ in range(n):
        fields = {name: take(width, signed) for name, width, signed, _ in _OBJECT_FIELDS}
        objects.append(PerceivedObject(**fields))
    return CollectivePerceptionMessage(
        header=CpmHeader(values["header.psid"], values["header.generation_time"]),
        pdu=ItsPduHeader(
            values["pdu.protocol_version"], values["pdu.message_id"], values["pdu.station_id"]
        ),
        management=ManagementContainer(
            values["management.latitude"],
            values["management.longitude"],
            values["management.reference_time"],
        ),
        objects=tuple(objects),
        mac=tag,
    )


def padded_bytes_to_bits(data: bytes) -> np.ndarray:
    """Recover the exact bitstring from its canonical zero-padded byte form."""
    nbytes = len(data)
    if nbytes < cpm_size_bytes(0):
        raise FramingError(f"{nbytes} bytes is shorter than an empty CPM")
    n = (nbytes * 8 - BASE_BITS) // OBJECT_BITS
    if cpm_size_bytes(n) != nbytes:
        raise FramingError(f"{nbytes} bytes is not a padded 272 + 74n bit message")
    nbits = cpm_size_bits(n)
    bits = bytes_to_bits(data)
    if bits[nbits:].any():
        raise FramingError("non-zero padding bits")
    return bits[:nbits]


def encode_cpm_bytes(msg: CollectivePerceptionMessage, key: bytes = DEFAULT_KEY) -> bytes:
    return bits_to_bytes(encode_cpm(msg, key))


def decode_cpm_bytes(data: bytes, key: bytes = DEFAULT_KEY) -> CollectivePerceptionMessage:
    return decode_cpm(padded_bytes_to_bits(data), key)


# -- structured text form (JSON-compatible dicts) ---------------------------

def message_to_dict(msg: CollectivePerceptionMessage) -> dict:
    return {
        "header": {"psid": msg.header.psid, "generation_time": msg.header.generation_time},
        "pdu": {
            "protocol_version": msg.pdu.protocol_version,
            "message_id": msg.pdu.message_id,
            "station_id": msg.pdu.station_id,
        },
        "management": {
            "latitude": msg.management.latitude,
            "longitude": msg.management.longitude,
            "reference_time": msg.management.reference_time,
        },
        "objects": [
            {"x": o.x, "y": o.y, "vx": o.vx, "vy": o.vy, "delta_t": o.delta_t}
            for o in msg.objects
        ],
    }


def message_from_dict(data: dict) -> CollectivePerceptionMessage:
    """Build a message from its dict form.

    ``management.reference_time`` may be omitted, in which case it is derived
    from ``header.generation_time``. Missing or unknown keys raise
    ``CpmError`` naming the offending field.
    """
    try:
        header = CpmHeader(**data["header"])
        pdu = ItsPduHeader(**data["pdu"])
        mgmt = dict(data["management"])
        mgmt.setdefault("reference_time", reference_time_for(int(header.generation_time)))
        management = ManagementContainer(**mgmt)
        objects = tuple(PerceivedObject(**o) for o in data.get("objects", []))
    except KeyError as exc:
        raise CpmError(f"missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise CpmError(f"bad field set: {exc}") from None
    return CollectivePerceptionMessage(header, pdu, management, objects)


def random_message(rng: np.random.Generator, n: int = 2) -> CollectivePerceptionMessage:
    """Uniformly random valid message with ``n`` objects."""

    def draw(lo, hi):
        if hi - lo >= 1 << 62:
            return lo + int.from_bytes(rng.bytes(8), "big") % (hi - lo + 1)
        return int(rng.integers(lo, hi, endpoint=True))

    gen_time = draw(0, (1 << 64) - 1)
    objects = tuple(
        PerceivedObject(*(draw(lo, hi) for _, _, _, (lo, hi) in _OBJECT_FIELDS))
        for _ in range(n)
    )
    return CollectivePerceptionMessage(
        header=CpmHeader(draw(0, 0xFFFF), gen_time),
        pdu=ItsPduHeader(draw(0, 0xFF), draw(0, 0xFF), draw(0, 0xFFFFFFFF)),
        management=ManagementContainer(
            draw(-MAX_LATITUDE, MAX_LATITUDE),
            draw(-MAX_LONGITUDE, MAX_LONGITUDE),
            reference_time_for(gen_time),
        ),
        objects=objects,
    )


def with_objects(msg: CollectivePerceptionMessage, objects) -> CollectivePerceptionMessage:
    return replace(msg, objects=tuple(objects))

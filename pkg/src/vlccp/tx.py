"""LED-bar block OOK transmitter.

The 96-LED bar is driven as 12 blocks of 8 LEDs. Blocks 0, 1, 10 and 11
carry the tracking pattern; blocks 2..9 carry one data byte, MSB in block 2.
Blocks 0 and 11 are lit on even symbol indices, blocks 1 and 10 on odd ones,
so each end always shows one ON and one OFF reference and every tracking
block toggles on every symbol.

A packet on air is ``idle_gap`` idle symbols (data 0x00), one 0xFF sync
symbol, then the data bytes.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .bits import as_bits, bits_to_bytes, bytes_to_bits

N_LEDS = 96
N_BLOCKS = 12
LEDS_PER_BLOCK = 8
DATA_BLOCKS = range(2, 10)
EVEN_ON_BLOCKS = (0, 11)
ODD_ON_BLOCKS = (1, 10)
TRACKING_BLOCKS = (0, 1, 10, 11)

SYNC_BYTE = 0xFF
IDLE_BYTE = 0x00
MIN_IDLE_GAP = 2
STANDARD_TX_RATES = (50, 100, 125, 200, 250, 400, 500)


@dataclass(frozen=True)
class LedBarState:
    leds: tuple[bool, ...]

    def __post_init__(self):
        leds = tuple(bool(v) for v in self.leds)
        if len(leds) != N_LEDS:
            raise ValueError(f"LED bar needs {N_LEDS} values, got {len(leds)}")
        for b in range(N_BLOCKS):
            block = leds[b * LEDS_PER_BLOCK:(b + 1) * LEDS_PER_BLOCK]
            if len(set(block)) != 1:
                raise ValueError(f"block {b} is not uniform")
        object.__setattr__(self, "leds", leds)

    @classmethod
    def from_blocks(cls, blocks: Sequence[bool]) -> "LedBarState":
        if len(blocks) != N_BLOCKS:
            raise ValueError(f"need {N_BLOCKS} blocks, got {len(blocks)}")
        return cls(tuple(bool(b) for b in blocks for _ in range(LEDS_PER_BLOCK)))

    @property
    def blocks(self) -> tuple[bool, ...]:
        return self.leds[::LEDS_PER_BLOCK]

    @property
    def data_byte(self) -> int:
        value = 0
        for b in DATA_BLOCKS:
            value = (value << 1) | int(self.blocks[b])
        return value

    @property
    def parity(self) -> int:
        """0 when blocks 0/11 are lit, 1 when blocks 1/10 are lit."""
        return 0 if self.blocks[0] else 1

    def as_array(self) -> np.ndarray:
        return np.array(self.leds, dtype=bool)

    def to_line(self) -> str:
        return "".join("1" if v else "0" for v in self.leds)

    @classmethod
    def from_line(cls, text: str) -> "LedBarState":
        text = text.strip()
        if set(text) - {"0", "1"}:
            raise ValueError("LED line must contain only 0 and 1")
        return cls(tuple(c == "1" for c in text))


@dataclass(frozen=True)
class TxPacket:
    data_frames: tuple[int, ...]
    payload_bits: int
    sync_frame: int = SYNC_BYTE
    idle_gap: int = MIN_IDLE_GAP

    @property
    def n_frame(self) -> int:
        return len(self.data_frames)

    @property
    def padded_bits(self) -> np.ndarray:
        return bytes_to_bits(bytes(self.data_frames))

    def symbols(self) -> list[int]:
        """Bytes on air: idle gap, sync, data."""
        return [IDLE_BYTE] * self.idle_gap + [self.sync_frame] + list(self.data_frames)


def packetize(payload, idle_gap: int = MIN_IDLE_GAP) -> TxPacket:
    bits = as_bits(payload)
    if bits.size == 0:
        raise ValueError("empty payload")
    if idle_gap < MIN_IDLE_GAP:
        raise ValueError(f"idle gap must be at least {MIN_IDLE_GAP} frames")
    return TxPacket(tuple(bits_to_bytes(bits)), bits.size, SYNC_BYTE, idle_gap)


def frame_to_ledbar(data_byte: int, symbol_index: int) -> LedBarState:
    if not 0 <= data_byte <= 0xFF:
        raise ValueError(f"data byte {data_byte} out of range")
    even = symbol_index % 2 == 0
    blocks = [False] * N_BLOCKS
    for b in EVEN_ON_BLOCKS:
        blocks[b] = even
    for b in ODD_ON_BLOCKS:
        blocks[b] = not even
    for i, b in enumerate(DATA_BLOCKS):
        blocks[b] = bool((data_byte >> (7 - i)) & 1)
    return LedBarState.from_blocks(blocks)


@dataclass(frozen=True)
class TxSchedule:
    """Timestamped LED-bar frames at a fixed symbol rate.

    ``packet_spans`` holds one ``(idle_start_index, data_start_index, n_frame)``
    per packet, as indices into ``frames``.
    """

    frame_rate_tx: float
    start_time: float
    frames: tuple[LedBarState, ...]
    packet_spans: tuple[tuple[int, int, int], ...] = ()

    @property
    def period(self) -> float:
        return 1.0 / self.frame_rate_tx

    def time_of(self, index: int) -> float:
        return self.start_time + index / self.frame_rate_tx

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.frames)) / self.frame_rate_tx

    @property
    def end_time(self) -> float:
        return self.time_of(len(self.frames))

    @property
    def data_start_times(self) -> list[float]:
        return [self.time_of(d) for _, d, _ in self.packet_spans]

    @property
    def idle_start_times(self) -> list[float]:
        return [self.time_of(i) for i, _, _ in self.packet_spans]

    def index_at(self, t: float) -> int | None:
        """Index of the frame on the bar at time ``t``; None outside the schedule."""
        x = (t - self.start_time) * self.frame_rate_tx
        idx = math.floor(x + 1e-9)
        if idx < 0 or idx >= len(self.frames):
            return None
        return idx

    def state_at(self, t: float) -> LedBarState | None:
        idx = self.index_at(t)
        return None if idx is None else self.frames[idx]

    def packet_for_data_index(self, index: int) -> int | None:
        starts = [d for _, d, _ in self.packet_spans]
        k = bisect.bisect_right(starts, index) - 1
        if k < 0:
            return None
        _, d, n = self.packet_spans[k]
        return k if d <= index < d + n else None


def schedule(
    packets: TxPacket | Sequence[TxPacket],
    frame_rate_tx: float,
    start_time: float = 0.0,
    lead_in: int = 0,
    tail: int = 1,
) -> TxSchedule:
    """Lay packets out back to back at ``1/frame_rate_tx`` spacing.

    ``lead_in`` extra idle symbols precede the first packet (receiver
    acquisition time); ``tail`` idle symbols follow the last one so the final
    data symbol is closed by a tracking transition.
    """
    if frame_rate_tx <= 0:
        raise ValueError("frame_rate_tx must be positive")
    if isinstance(packets, TxPacket):
        packets = [packets]
    symbols: list[int] = [IDLE_BYTE] * lead_in
    spans = []
    for pkt in packets:
        idle_start = len(symbols)
        symbols.extend(pkt.symbols())
        spans.append((idle_start, idle_start + pkt.idle_gap + 1, pkt.n_frame))
    symbols.extend([IDLE_BYTE] * tail)
    frames = tuple(frame_to_ledbar(b, i) for i, b in enumerate(symbols))
    return TxSchedule(float(frame_rate_tx), float(start_time), frames, tuple(spans))


def write_frame_dump(sched: TxSchedule, path) -> None:
    """One line per frame: timestamp, then 96 characters of 0/1."""
    lines = [f"# rate={sched.frame_rate_tx!r} start={sched.start_time!r}"]
    for span in sched.packet_spans:
        lines.append("# packet " + " ".join(str(v) for v in span))
    for i, state in enumerate(sched.frames):
        lines.append(f"{sched.time_of(i):.9f} {state.to_line()}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_frame_dump(path) -> TxSchedule:
    rate = start = None
    spans = []
    frames = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# packet"):
            spans.append(tuple(int(v) for v in line.split()[2:]))
        elif line.startswith("#"):
            fields = dict(item.split("=") for item in line[1:].split())
            rate, start = float(fields["rate"]), float(fields["start"])
        else:
            _, leds = line.split()
            frames.append(LedBarState.from_line(leds))
    if rate is None:
        raise ValueError(f"{path}: missing rate header")
    return TxSchedule(rate, start, tuple(frames), tuple(spans))

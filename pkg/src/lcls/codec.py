"""Bit-exact encoder/decoder for the sensor's 112-byte firing packets.

Wire layout, little-endian throughout:

    packet (112 B): magic u16 = 0x55AA | 2 firing blocks | timestamp u32
                    (us since power-on) | factory code u16 = 0x2237
    block  (52 B):  flag u16 = 0xEEFF | vertical angle u16 (centideg,
                    < 36000) | 16 x (distance u16 in 2 mm units,
                    reflectivity u8)

Distance 0 encodes "no return"; any other value must lie in 250..50000
(0.5 m .. 100 m). A sweep is 82 consecutive packets (164 blocks, 2624
channel slots); block b of a sweep carries vertical angle
floor(b * 36000 / 164) centidegrees, which strictly increases.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1

PACKET_MAGIC = 0x55AA
BLOCK_FLAG = 0xEEFF
FACTORY_CODE = 0x2237

PACKET_SIZE = 112
BLOCK_SIZE = 52
PACKETS_PER_SWEEP = 82
BLOCKS_PER_SWEEP = 164
CHANNELS = 16
SWEEP_BYTES = PACKETS_PER_SWEEP * PACKET_SIZE
DIST_UNIT_M = 0.002
DIST_MIN_UNITS = 250
DIST_MAX_UNITS = 50000

CHANNEL_DTYPE = np.dtype([("dist", "<u2"), ("refl", "u1")])
BLOCK_DTYPE = np.dtype(
    [("flag", "<u2"), ("angle", "<u2"), ("channels", CHANNEL_DTYPE, (CHANNELS,))]
)
PACKET_DTYPE = np.dtype(
    [
        ("magic", "<u2"),
        ("blocks", BLOCK_DTYPE, (2,)),
        ("timestamp", "<u4"),
        ("factory", "<u2"),
    ]
)
assert PACKET_DTYPE.itemsize == PACKET_SIZE


class PacketFormatError(ValueError):
    """Input bytes do not form a valid packet or sweep."""


def block_vertical_angle(block_index: int) -> int:
    """Vertical angle of sweep block `block_index`, in centidegrees."""
    if not 0 <= block_index < BLOCKS_PER_SWEEP:
        raise ValueError(f"block index out of range 0..163: {block_index}")
    return (block_index * 36000) // BLOCKS_PER_SWEEP


BLOCK_ANGLES_CENTIDEG = np.array(
    [block_vertical_angle(b) for b in range(BLOCKS_PER_SWEEP)], dtype=np.uint16
)


@dataclass(frozen=True)
class FiringBlock:
    flag: int
    vertical_angle_centideg: int
    channels: tuple[tuple[int, int], ...]  # 16 x (distance_2mm, reflectivity)


@dataclass(frozen=True)
class FiringPacket:
    magic: int
    blocks: tuple[FiringBlock, FiringBlock]
    timestamp_us: int
    factory: int

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += struct.pack("<H", self.magic)
        for blk in self.blocks:
            out += struct.pack("<HH", blk.flag, blk.vertical_angle_centideg)
            for dist, refl in blk.channels:
                out += struct.pack("<HB", dist, refl)
        out += struct.pack("<IH", self.timestamp_us, self.factory)
        return bytes(out)


def decode_packet(data: bytes) -> FiringPacket:
    """Parse one 112-byte packet, checking every format invariant."""
    if len(data) != PACKET_SIZE:
        raise PacketFormatError(f"expected {PACKET_SIZE} bytes, got {len(data)}")
    (magic,) = struct.unpack_from("<H", data, 0)
    if magic != PACKET_MAGIC:
        raise PacketFormatError(
            f"bad magic 0x{magic:04X} at byte offset 0 (expected 0x{PACKET_MAGIC:04X})"
        )
    blocks = []
    for b in range(2):
        base = 2 + b * BLOCK_SIZE
        flag, angle = struct.unpack_from("<HH", data, base)
        if flag != BLOCK_FLAG:
            raise PacketFormatError(
                f"bad block flag 0x{flag:04X} at byte offset {base} "
                f"(expected 0x{BLOCK_FLAG:04X})"
            )
        if angle >= 36000:
            raise PacketFormatError(
                f"vertical angle {angle} out of range at byte offset {base + 2}"
            )
        channels = []
        for c in range(CHANNELS):
            off = base + 4 + c * 3
            dist, refl = struct.unpack_from("<HB", data, off)
            if dist != 0 and not (DIST_MIN_UNITS <= dist <= DIST_MAX_UNITS):
                raise PacketFormatError(
                    f"distance {dist} out of range at byte offset {off} "
                    f"(block {b}, channel {c})"
                )
            channels.append((dist, refl))
        blocks.append(FiringBlock(flag, angle, tuple(channels)))
    timestamp, factory = struct.unpack_from("<IH", data, 2 + 2 * BLOCK_SIZE)
    if factory != FACTORY_CODE:
        raise PacketFormatError(
            f"bad factory code 0x{factory:04X} at byte offset {PACKET_SIZE - 2} "
            f"(expected 0x{FACTORY_CODE:04X})"
        )
    return FiringPacket(magic, (blocks[0], blocks[1]), timestamp, factory)


@dataclass
class Sweep:
    """One decoded 360-degree vertical rotation, array-backed.

    distance_2mm and reflectivity are (164, 16) block-by-channel arrays;
    timestamps_us holds the 82 packet trailer timestamps. Vertical
    angles are implied by block index (see block_vertical_angle) and are
    verified at decode time.
    """

    distance_2mm: np.ndarray
    reflectivity: np.ndarray
    timestamps_us: np.ndarray

    def __post_init__(self) -> None:
        self.distance_2mm = np.asarray(self.distance_2mm, np.uint16).reshape(
            BLOCKS_PER_SWEEP, CHANNELS
        )
        self.reflectivity = np.asarray(self.reflectivity, np.uint8).reshape(
            BLOCKS_PER_SWEEP, CHANNELS
        )
        self.timestamps_us = np.asarray(self.timestamps_us, np.uint32).reshape(
            PACKETS_PER_SWEEP
        )

    def distances_m(self) -> np.ndarray:
        """(164, 16) float distances in meters, NaN where there is no return."""
        d = self.distance_2mm.astype(np.float64) * DIST_UNIT_M
        d[self.distance_2mm == 0] = np.nan
        return d

    @property
    def packets(self) -> tuple[FiringPacket, ...]:
        out = []
        for p in range(PACKETS_PER_SWEEP):
            blocks = []
            for b in range(2):
                row = 2 * p + b
                channels = tuple(
                    (int(self.distance_2mm[row, c]), int(self.reflectivity[row, c]))
                    for c in range(CHANNELS)
                )
                blocks.append(
                    FiringBlock(BLOCK_FLAG, int(BLOCK_ANGLES_CENTIDEG[row]), channels)
                )
            out.append(
                FiringPacket(
                    PACKET_MAGIC,
                    (blocks[0], blocks[1]),
                    int(self.timestamps_us[p]),
                    FACTORY_CODE,
                )
            )
        return tuple(out)

    def to_bytes(self) -> bytes:
        return _pack_sweep(self.distance_2mm, self.reflectivity, self.timestamps_us)


def _pack_sweep(
    dist_units: np.ndarray, refl: np.ndarray, timestamps_us: np.ndarray
) -> bytes:
    rec = np.zeros(PACKETS_PER_SWEEP, dtype=PACKET_DTYPE)
    rec["magic"] = PACKET_MAGIC
    rec["factory"] = FACTORY_CODE
    rec["timestamp"] = np.asarray(timestamps_us, np.uint32)
    rec["blocks"]["flag"] = BLOCK_FLAG
    rec["blocks"]["angle"] = BLOCK_ANGLES_CENTIDEG.reshape(PACKETS_PER_SWEEP, 2)
    rec["blocks"]["channels"]["dist"] = np.asarray(dist_units, np.uint16).reshape(
        PACKETS_PER_SWEEP, 2, CHANNELS
    )
    rec["blocks"]["channels"]["refl"] = np.asarray(refl, np.uint8).reshape(
        PACKETS_PER_SWEEP, 2, CHANNELS
    )
    return rec.tobytes()


def encode_sweep(
    distances_m: np.ndarray,
    reflectivity: np.ndarray,
    timestamps_us: np.ndarray | int = 0,
) -> bytes:
    """Encode one sweep of optional returns into 82 packets (9184 bytes).

    distances_m: (164, 16) float, NaN marking "no return"; every present
    distance must lie within the 0.5..100 m sensor range and is
    quantized to the nearest 2 mm. reflectivity: (164, 16) integers
    0..255 (ignored and zeroed where there is no return). timestamps_us:
    scalar applied to all packets, or one value per packet (82,).
    """
    d = np.asarray(distances_m, dtype=np.float64).reshape(BLOCKS_PER_SWEEP, CHANNELS)
    refl = np.asarray(reflectivity).reshape(BLOCKS_PER_SWEEP, CHANNELS)
    present = np.isfinite(d)
    bad = present & ((d < 0.5 - 1e-9) | (d > 100.0 + 1e-9))
    if bad.any():
        b, c = np.argwhere(bad)[0]
        raise ValueError(
            f"distance {d[b, c]} m out of sensor range [0.5, 100] "
            f"at block {b}, channel {c}"
        )
    units = np.zeros(d.shape, dtype=np.uint16)
    units[present] = np.rint(d[present] / DIST_UNIT_M).astype(np.uint16)
    refl_out = np.where(present, refl, 0).astype(np.uint8)
    ts = np.broadcast_to(
        np.asarray(timestamps_us, np.uint32), (PACKETS_PER_SWEEP,)
    ).copy()
    return _pack_sweep(units, refl_out, ts)


@dataclass(frozen=True)
class StreamIssue:
    """One diagnostic raised while framing a packet stream."""

    kind: str
    byte_offset: int
    packet_index: int | None
    message: str


@dataclass
class StreamDiagnostics:
    issues: list[StreamIssue] = field(default_factory=list)
    residue_bytes: int = 0

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, kind: str, byte_offset: int, packet_index: int | None, message: str) -> None:
        self.issues.append(StreamIssue(kind, byte_offset, packet_index, message))


def decode_stream(data: bytes) -> tuple[list[Sweep], StreamDiagnostics]:
    """Frame `data` into sweeps; never raises on malformed input.

    The stream is cut into consecutive 112-byte packets and grouped 82
    at a time. A sweep containing any bad packet (or a vertical-angle
    sequence that does not match the sweep pattern) is rejected whole
    and reported; a trailing partial packet or partial sweep is reported
    but not fatal. Accepted sweeps times 9184 plus residue_bytes always
    equals len(data).
    """
    diags = StreamDiagnostics()
    n_packets = len(data) // PACKET_SIZE
    tail = len(data) - n_packets * PACKET_SIZE
    if tail:
        diags.add(
            "trailing-partial-packet",
            n_packets * PACKET_SIZE,
            None,
            f"{tail} trailing bytes do not form a whole packet",
        )
        diags.residue_bytes += tail

    n_sweeps = n_packets // PACKETS_PER_SWEEP
    leftover = n_packets - n_sweeps * PACKETS_PER_SWEEP
    if leftover:
        diags.add(
            "partial-sweep",
            n_sweeps * SWEEP_BYTES,
            n_sweeps * PACKETS_PER_SWEEP,
            f"{leftover} trailing packets do not form a whole sweep",
        )
        diags.residue_bytes += leftover * PACKET_SIZE
    if n_sweeps == 0:
        return [], diags

    arr = np.frombuffer(data, dtype=PACKET_DTYPE, count=n_sweeps * PACKETS_PER_SWEEP)
    dist = arr["blocks"]["channels"]["dist"]
    packet_ok = (
        (arr["magic"] == PACKET_MAGIC)
        & (arr["factory"] == FACTORY_CODE)
        & (arr["blocks"]["flag"] == BLOCK_FLAG).all(axis=1)
        & (arr["blocks"]["angle"] < 36000).all(axis=1)
        & ((dist == 0) | ((dist >= DIST_MIN_UNITS) & (dist <= DIST_MAX_UNITS))).all(
            axis=(1, 2)
        )
    )

    sweeps: list[Sweep] = []
    for s in range(n_sweeps):
        lo = s * PACKETS_PER_SWEEP
        sl = slice(lo, lo + PACKETS_PER_SWEEP)
        if not packet_ok[sl].all():
            for j in np.nonzero(~packet_ok[sl])[0]:
                idx = lo + int(j)
                off = idx * PACKET_SIZE
                try:
                    decode_packet(data[off : off + PACKET_SIZE])
                    msg = "packet failed stream validation"
                except PacketFormatError as exc:
                    msg = str(exc)
                diags.add("bad-packet", off, idx, f"sweep {s} rejected: {msg}")
            diags.residue_bytes += SWEEP_BYTES
            continue
        angles = arr["blocks"]["angle"][sl].reshape(BLOCKS_PER_SWEEP)
        if not np.array_equal(angles, BLOCK_ANGLES_CENTIDEG):
            diags.add(
                "bad-angle-sequence",
                lo * PACKET_SIZE,
                lo,
                f"sweep {s} rejected: vertical angle sequence does not match "
                f"the sweep pattern",
            )
            diags.residue_bytes += SWEEP_BYTES
            continue
        sweeps.append(
            Sweep(
                dist[sl].reshape(BLOCKS_PER_SWEEP, CHANNELS).copy(),
                arr["blocks"]["channels"]["refl"][sl]
                .reshape(BLOCKS_PER_SWEEP, CHANNELS)
                .copy(),
                arr["timestamp"][sl].copy(),
            )
        )
    return sweeps, diags

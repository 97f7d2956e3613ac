from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import numpy.typing as npt

from .model import (LEAST_SQUARES_S_LEVELS, S_MAX_RESOLUTION, FractalCode, SMode, SSchedule, TransformRecord,
                    domain_positions, is_power_of_two, quadtree_levels)
from .pixmap import GrayImage

MAGIC = b'FIC1'
HEADER = struct.Struct('>4sHHBBBHH')
MODE_CODES: dict[SMode, int] = {SMode.PREDEFINED: 0, SMode.SAMPLED10: 1, SMode.LEAST_SQUARES: 2}

O_BITS = 8
O_LEVELS = 1 << O_BITS
O_RANGE = 255.0
O_CELL = 2 * O_RANGE / O_LEVELS
ISOMETRY_BITS = 3


class CodeFormatError(ValueError):
    pass


class QuantizationError(ValueError):
    pass


def quantize_o_array(o: npt.ArrayLike) -> npt.NDArray[np.int64]:
    values = np.asarray(o, dtype=np.float64)
    if np.any(np.abs(values) > O_RANGE):
        raise QuantizationError(f"Offsets must lie in [-{O_RANGE}, {O_RANGE}]")
    scaled = (values + O_RANGE) / O_CELL
    codes = np.floor(scaled)
    # a value on a cell boundary goes to the reconstruction point nearer zero
    codes = codes - ((codes == scaled) & (values > 0))
    return np.clip(codes, 0, O_LEVELS - 1).astype(np.int64)


def dequantize_o_array(codes: npt.ArrayLike) -> npt.NDArray[np.float64]:
    return -O_RANGE + (np.asarray(codes, dtype=np.float64) + 0.5) * O_CELL


def quantize_o(o: float) -> int:
    return int(quantize_o_array(o))


def dequantize_o(code: int) -> float:
    if not 0 <= code < O_LEVELS:
        raise QuantizationError(f"Offset code {code} is outside 0..{O_LEVELS - 1}")
    return float(dequantize_o_array(code))


def quantize_s_array(s: npt.ArrayLike, s_max: float) -> npt.NDArray[np.int64]:
    """Index of the nearest least-squares reconstruction point s_max * k / 31."""
    last = LEAST_SQUARES_S_LEVELS - 1
    codes = np.rint(np.asarray(s, dtype=np.float64) / s_max * last)
    return np.clip(codes, 0, last).astype(np.int64)


def bits_for(count: int) -> int:
    return max(0, count - 1).bit_length()


@dataclass(frozen=True)
class QuantSpec:
    s_bits: dict[int, int]
    position_bits: dict[int, tuple[int, int]]
    o_bits: int = O_BITS
    isometry_bits: int = ISOMETRY_BITS

    @classmethod
    def for_code(cls, code: FractalCode) -> QuantSpec:
        schedule = code.schedule
        s_bits = {}
        position_bits = {}
        for level in code.levels():
            step = code.step_for(level)
            s_bits[level] = bits_for(len(schedule.level(level)))
            position_bits[level] = (bits_for(domain_positions(code.width, level, step)),
                                    bits_for(domain_positions(code.height, level, step)))
        return cls(s_bits=s_bits, position_bits=position_bits)

    def leaf_bits(self, level: int) -> int:
        bits_x, bits_y = self.position_bits[level]
        return bits_x + bits_y + self.isometry_bits + self.s_bits[level] + self.o_bits


class BitWriter:
    """MSB-first bit packer."""

    def __init__(self) -> None:
        self._buffer = bytearray()
        self._accumulator = 0
        self._pending = 0
        self.bits_written = 0

    def write(self, value: int, width: int) -> None:
        if width == 0:
            return
        assert 0 <= value < (1 << width), f"{value} does not fit in {width} bits"
        self._accumulator = (self._accumulator << width) | value
        self._pending += width
        self.bits_written += width
        while self._pending >= 8:
            self._pending -= 8
            self._buffer.append((self._accumulator >> self._pending) & 0xFF)
        self._accumulator &= (1 << self._pending) - 1

    def getvalue(self) -> bytes:
        if self._pending:
            return bytes(self._buffer) + bytes([(self._accumulator << (8 - self._pending)) & 0xFF])
        return bytes(self._buffer)


class BitReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._position = 0

    def read(self, width: int) -> int:
        if width == 0:
            return 0
        end = self._position + width
        if end > len(self._data) * 8:
            raise CodeFormatError("Truncated stream")
        first = self._position // 8
        last = (end + 7) // 8
        chunk = int.from_bytes(self._data[first:last], 'big')
        self._position = end
        return (chunk >> (last * 8 - end)) & ((1 << width) - 1)


def _header(code: FractalCode) -> bytes:
    if not (0 < code.width < 1 << 16 and 0 < code.height < 1 << 16 and 0 < code.step < 1 << 16):
        raise CodeFormatError(f"Dimensions {code.width}x{code.height} or step {code.step} exceed 16 bits")
    counts = code.schedule.counts()
    if any(count > 255 for count in counts):
        raise CodeFormatError(f"Candidate counts {counts} exceed 8 bits")
    return HEADER.pack(MAGIC, code.width, code.height, code.max_range, code.min_range, MODE_CODES[code.s_mode],
                       round(code.s_max * S_MAX_RESOLUTION), code.step) + bytes(counts)


class _TreeWriter:
    def __init__(self, code: FractalCode) -> None:
        self.code = code
        self.spec = QuantSpec.for_code(code)
        self.writer = BitWriter()
        self.leaves = {(r.range_x, r.range_y, r.range_size): r for r in code.records}
        self.visited = 0

    def write(self) -> bytes:
        if len(self.leaves) != len(self.code.records):
            raise CodeFormatError("Duplicate leaves in the quadtree")
        size = self.code.max_range
        for y in range(0, self.code.height, size):
            for x in range(0, self.code.width, size):
                self._write_node(x, y, size)
        if self.visited != len(self.code.records):
            raise CodeFormatError(f"{len(self.code.records) - self.visited} records are not leaves of the quadtree")
        return self.writer.getvalue()

    def _write_node(self, x: int, y: int, size: int) -> None:
        record = self.leaves.get((x, y, size))
        if size > self.code.min_range:
            self.writer.write(0 if record else 1, 1)
        elif record is None:
            raise CodeFormatError(f"Inconsistent tree: no leaf at ({x}, {y}) of minimum size {size}")
        if record is None:
            half = size // 2
            for dy in (0, half):
                for dx in (0, half):
                    self._write_node(x + dx, y + dy, half)
            return
        self.visited += 1
        self._write_leaf(record)

    def _write_leaf(self, record: TransformRecord) -> None:
        level = record.range_size
        step = self.code.step_for(level)
        bits_x, bits_y = self.spec.position_bits[level]
        if record.domain_x % step or record.domain_y % step:
            raise CodeFormatError(f"Domain origin ({record.domain_x}, {record.domain_y}) is off the step-{step} grid")
        for value, width in ((record.domain_x // step, bits_x),
                             (record.domain_y // step, bits_y),
                             (record.isometry, self.spec.isometry_bits),
                             (record.s_index, self.spec.s_bits[level]),
                             (record.o_code, self.spec.o_bits)):
            if not 0 <= value < (1 << width):
                raise CodeFormatError(f"Field value {value} does not fit in {width} bits in {record}")
            self.writer.write(value, width)


def serialize(code: FractalCode) -> bytes:
    return _header(code) + _TreeWriter(code).write()


class _TreeReader:
    def __init__(self, code: FractalCode, body: bytes) -> None:
        self.code = code
        self.spec = QuantSpec.for_code(code)
        self.schedule = code.schedule
        self.reader = BitReader(body)
        self.records: list[TransformRecord] = []

    def read(self) -> list[TransformRecord]:
        size = self.code.max_range
        for y in range(0, self.code.height, size):
            for x in range(0, self.code.width, size):
                self._read_node(x, y, size)
        return self.records

    def _read_node(self, x: int, y: int, size: int) -> None:
        split = size > self.code.min_range and self.reader.read(1) == 1
        if split:
            half = size // 2
            for dy in (0, half):
                for dx in (0, half):
                    self._read_node(x + dx, y + dy, half)
            return
        self.records.append(self._read_leaf(x, y, size))

    def _read_leaf(self, x: int, y: int, size: int) -> TransformRecord:
        step = self.code.step_for(size)
        bits_x, bits_y = self.spec.position_bits[size]
        columns = domain_positions(self.code.width, size, step)
        rows = domain_positions(self.code.height, size, step)
        column = self.reader.read(bits_x)
        row = self.reader.read(bits_y)
        if column >= columns or row >= rows:
            raise CodeFormatError(f"Domain position ({column}, {row}) outside the {columns}x{rows} grid at level {size}")
        isometry = self.reader.read(self.spec.isometry_bits)
        s_index = self.reader.read(self.spec.s_bits[size])
        if s_index >= len(self.schedule.level(size)):
            raise CodeFormatError(f"s index {s_index} outside the level-{size} candidate set")
        o_code = self.reader.read(self.spec.o_bits)
        return TransformRecord(range_x=x, range_y=y, range_size=size,
                               domain_x=column * step, domain_y=row * step,
                               isometry=isometry, s_index=s_index, o_code=o_code)


def deserialize(data: bytes) -> FractalCode:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CodeFormatError(f"Bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(data) < HEADER.size:
        raise CodeFormatError("Truncated stream: incomplete header")
    _, width, height, max_range, min_range, mode_code, s_max_fixed, step = HEADER.unpack_from(data)
    modes = {value: mode for mode, value in MODE_CODES.items()}
    if mode_code not in modes:
        raise CodeFormatError(f"Unknown s-mode code {mode_code}")
    if not (is_power_of_two(max_range) and is_power_of_two(min_range) and 2 <= min_range <= max_range <= 32):
        raise CodeFormatError(f"Invalid range sizes {max_range}/{min_range}")
    if width == 0 or height == 0 or width % max_range or height % max_range:
        raise CodeFormatError(f"Image {width}x{height} is not tiled by {max_range}-pixel ranges")
    if s_max_fixed == 0 or s_max_fixed > S_MAX_RESOLUTION or step == 0:
        raise CodeFormatError(f"Invalid s_max {s_max_fixed} or step {step}")

    levels = quadtree_levels(max_range, min_range)
    body_start = HEADER.size + len(levels)
    if len(data) < body_start:
        raise CodeFormatError("Truncated stream: missing candidate counts")
    s_mode = modes[mode_code]
    s_max = s_max_fixed / S_MAX_RESOLUTION
    counts = list(data[HEADER.size:body_start])
    expected_counts = SSchedule.for_mode(s_mode, levels, s_max).counts()
    if counts != expected_counts:
        raise CodeFormatError(f"Candidate counts {counts} do not match {s_mode.value} ({expected_counts})")

    shell = FractalCode(width=width, height=height, max_range=max_range, min_range=min_range,
                        s_mode=s_mode, s_max=s_max, step=step, records=())
    records = _TreeReader(shell, data[body_start:]).read()
    return FractalCode(width=width, height=height, max_range=max_range, min_range=min_range,
                       s_mode=s_mode, s_max=s_max, step=step, records=tuple(records))


def payload_bits(code: FractalCode) -> int:
    spec = QuantSpec.for_code(code)
    top_blocks = (code.width // code.max_range) * (code.height // code.max_range)
    internal_nodes = (len(code.records) - top_blocks) // 3
    split_bits = internal_nodes + sum(1 for r in code.records if r.range_size > code.min_range)
    return split_bits + sum(spec.leaf_bits(r.range_size) for r in code.records)


def expected_size(code: FractalCode) -> int:
    return HEADER.size + len(code.levels()) + (payload_bits(code) + 7) // 8


def compression_ratio(image: GrayImage, stream: bytes) -> float:
    if not stream:
        raise CodeFormatError("Empty stream has no compression ratio")
    return image.width * image.height / len(stream)


def write_code(path: Union[str, Path], code: FractalCode) -> bytes:
    stream = serialize(code)
    Path(path).write_bytes(stream)
    return stream


def read_code(path: Union[str, Path]) -> FractalCode:
    return deserialize(Path(path).read_bytes())

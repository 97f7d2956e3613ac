from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np
import numpy.typing as npt

Block = npt.NDArray[np.float64]

PGM_MAGIC = b'P5'
PGM_MAXVAL = 255
ISOMETRY_COUNT = 8
_WHITESPACE = b' \t\n\r\v\f'


class PgmFormatError(ValueError):
    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class BlockError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster; ``data[r, c]`` is the pixel at row r, column c."""
    width: int
    height: int
    data: npt.NDArray[np.uint8]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise BlockError(f"Image dimensions must be positive, got {self.width}x{self.height}")
        if self.data.shape != (self.height, self.width):
            raise BlockError(f"Pixel array shape {self.data.shape} does not match {self.height}x{self.width}")
        if self.data.dtype != np.uint8:
            raise BlockError(f"Pixel array must be uint8, got {self.data.dtype}")

    @classmethod
    def from_array(cls, array: npt.ArrayLike) -> GrayImage:
        values = np.asarray(array)
        if values.ndim != 2:
            raise BlockError(f"Expected a 2-D array, got {values.ndim} dimensions")
        if values.size and (values.min() < 0 or values.max() > 255):
            raise BlockError("Gray levels must lie in [0, 255]")
        if np.issubdtype(values.dtype, np.floating) and not np.array_equal(values, np.round(values)):
            raise BlockError("Gray levels must be integers")
        data = values.astype(np.uint8)
        data.flags.writeable = False
        return cls(width=data.shape[1], height=data.shape[0], data=data)

    @classmethod
    def constant(cls, width: int, height: int, gray: int) -> GrayImage:
        return cls.from_array(np.full((height, width), gray, dtype=np.uint8))

    def __eq__(self, o: object) -> bool:
        if isinstance(o, GrayImage):
            return self.width == o.width and \
                   self.height == o.height and \
                   np.array_equal(self.data, o.data)
        return False

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"


class _HeaderReader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.position = 0

    def skip_separators(self) -> None:
        while self.position < len(self.data):
            current = self.data[self.position:self.position + 1]
            if current in _WHITESPACE:
                self.position += 1
            elif current == b'#':
                end = self.data.find(b'\n', self.position)
                self.position = len(self.data) if end < 0 else end + 1
            else:
                break

    def read_integer(self, field: str) -> int:
        self.skip_separators()
        start = self.position
        while self.position < len(self.data) and self.data[self.position:self.position + 1].isdigit():
            self.position += 1
        if start == self.position:
            raise PgmFormatError(field, "expected a decimal integer")
        return int(self.data[start:self.position])


def load_pgm(data: bytes) -> GrayImage:
    if data[:2] != PGM_MAGIC:
        raise PgmFormatError('magic', f"expected {PGM_MAGIC!r}, got {data[:2]!r}")
    reader = _HeaderReader(data)
    reader.position = 2
    if reader.position < len(data) and data[2:3] not in _WHITESPACE and data[2:3] != b'#':
        raise PgmFormatError('magic', f"expected whitespace after {PGM_MAGIC!r}")
    width = reader.read_integer('width')
    height = reader.read_integer('height')
    maxval = reader.read_integer('maxval')
    if width == 0:
        raise PgmFormatError('width', "zero dimension")
    if height == 0:
        raise PgmFormatError('height', "zero dimension")
    if maxval != PGM_MAXVAL:
        raise PgmFormatError('maxval', f"only {PGM_MAXVAL} is supported, got {maxval}")
    if reader.position >= len(data) or data[reader.position:reader.position + 1] not in _WHITESPACE:
        raise PgmFormatError('payload', "missing separator after header")
    start = reader.position + 1
    expected = width * height
    payload = data[start:start + expected]
    if len(payload) < expected:
        raise PgmFormatError('payload', f"truncated: expected {expected} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage.from_array(pixels)


def save_pgm(image: GrayImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n{PGM_MAXVAL}\n".encode('ascii')
    return header + image.data.tobytes()


def read_pgm(path: Union[str, Path]) -> GrayImage:
    return load_pgm(Path(path).read_bytes())


def write_pgm(path: Union[str, Path], image: GrayImage) -> None:
    Path(path).write_bytes(save_pgm(image))


def extract_block(image: GrayImage, x: int, y: int, size: int) -> Block:
    if x < 0 or y < 0 or size < 1 or x + size > image.width or y + size > image.height:
        raise BlockError(f"Block ({x}, {y}, size {size}) is outside the {image.width}x{image.height} image")
    return image.data[y:y + size, x:x + size].astype(np.float64)


def decimate(block: npt.NDArray[Any]) -> Block:
    """Averages 2x2 cells over the last two axes; accepts one block or a stack."""
    size = block.shape[-1]
    if block.shape[-2] != size:
        raise BlockError(f"Expected square blocks, got {block.shape[-2:]}")
    if size < 2 or size % 2:
        raise BlockError(f"Decimation needs an even block size, got {size}")
    half = size // 2
    cells = np.asarray(block, dtype=np.float64).reshape(*block.shape[:-2], half, 2, half, 2)
    return cells.sum(axis=(-3, -1)) / 4.0


def apply_isometry(block: npt.NDArray[Any], k: int) -> Block:
    """k = 0..3 rotate clockwise by 90k degrees; k = 4..7 rotate by k - 4 then mirror horizontally."""
    if not 0 <= k < ISOMETRY_COUNT:
        raise BlockError(f"Isometry index must lie in 0..7, got {k}")
    if block.shape[-1] != block.shape[-2]:
        raise BlockError(f"Expected square blocks, got {block.shape[-2:]}")
    mirror, rotation = divmod(k, 4)
    result = np.rot90(block, -rotation, axes=(-2, -1))
    if mirror:
        result = np.flip(result, axis=-1)
    return np.ascontiguousarray(result, dtype=np.float64)


def block_mean(block: npt.NDArray[Any]) -> float:
    if block.size == 0:
        raise BlockError("Mean of an empty block")
    return float(np.mean(block, dtype=np.float64))

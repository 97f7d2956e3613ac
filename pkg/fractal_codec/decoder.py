from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import numpy.typing as npt
from logzero import logger
from numpy.lib.stride_tricks import sliding_window_view

from .codeformat import dequantize_o_array
from .model import DecodeSettings, FractalCode
from .pixmap import ISOMETRY_COUNT, GrayImage, apply_isometry, decimate


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class _LevelPlan:
    size: int
    rows: npt.NDArray[np.int64]
    columns: npt.NDArray[np.int64]
    domain_x: npt.NDArray[np.int64]
    domain_y: npt.NDArray[np.int64]
    isometries: npt.NDArray[np.int64]
    s: npt.NDArray[np.float64]
    o: npt.NDArray[np.float64]


class DecodePlan:
    """The stored affine maps grouped by range size, ready to apply to a whole image at once."""

    def __init__(self, code: FractalCode) -> None:
        self.width = code.width
        self.height = code.height
        self.levels: list[_LevelPlan] = []
        schedule = code.schedule
        if any(r.range_size not in schedule.candidates for r in code.records):
            raise DecodeError("Record with a range size outside the quadtree levels")
        if sum(r.range_size ** 2 for r in code.records) != code.width * code.height:
            raise DecodeError(f"{len(code.records)} records do not tile the {code.width}x{code.height} image")
        for size in code.levels():
            records = [r for r in code.records if r.range_size == size]
            if not records:
                continue
            for r in records:
                self._check_record(r.range_x, r.range_y, r.domain_x, r.domain_y, size, r.isometry)
            candidates = schedule.level(size)
            if any(r.s_index >= len(candidates) for r in records):
                raise DecodeError(f"s index outside the level-{size} candidate set")
            offsets = np.arange(size)
            range_x = np.array([r.range_x for r in records], dtype=np.int64)
            range_y = np.array([r.range_y for r in records], dtype=np.int64)
            self.levels.append(_LevelPlan(
                size=size,
                rows=range_y[:, None, None] + offsets[None, :, None],
                columns=range_x[:, None, None] + offsets[None, None, :],
                domain_x=np.array([r.domain_x for r in records], dtype=np.int64),
                domain_y=np.array([r.domain_y for r in records], dtype=np.int64),
                isometries=np.array([r.isometry for r in records], dtype=np.int64),
                s=np.array([candidates[r.s_index] for r in records], dtype=np.float64),
                o=dequantize_o_array([r.o_code for r in records])))
        self._check_tiling(len(code.records))

    def _check_tiling(self, count: int) -> None:
        coverage = np.zeros((self.height, self.width), dtype=np.int64)
        for level in self.levels:
            np.add.at(coverage, (level.rows, level.columns), 1)
        if np.any(coverage != 1):
            missing = int(np.count_nonzero(coverage == 0))
            raise DecodeError(f"{count} records do not tile the {self.width}x{self.height} image: "
                              f"{missing} pixels uncovered, {int(np.count_nonzero(coverage > 1))} covered twice")

    def _check_record(self, x: int, y: int, dx: int, dy: int, size: int, isometry: int) -> None:
        if x < 0 or y < 0 or x + size > self.width or y + size > self.height:
            raise DecodeError(f"Range ({x}, {y}) of size {size} is outside the {self.width}x{self.height} image")
        if dx < 0 or dy < 0 or dx + 2 * size > self.width or dy + 2 * size > self.height:
            raise DecodeError(f"Domain ({dx}, {dy}) of size {2 * size} is outside the {self.width}x{self.height} image")
        if not 0 <= isometry < ISOMETRY_COUNT:
            raise DecodeError(f"Isometry {isometry} is not in 0..7")

    def apply(self, previous: npt.NDArray[np.uint8]) -> npt.NDArray[np.uint8]:
        # All reads come from the previous iterate; _check_tiling guarantees every pixel is written once.
        result = np.empty_like(previous)
        for level in self.levels:
            windows = sliding_window_view(previous, (2 * level.size, 2 * level.size))
            shrunk = decimate(windows[level.domain_y, level.domain_x])
            for k in range(ISOMETRY_COUNT):
                selected = level.isometries == k
                if k and np.any(selected):
                    shrunk[selected] = apply_isometry(shrunk[selected], k)
            values = level.s[:, None, None] * shrunk + level.o[:, None, None]
            result[level.rows, level.columns] = np.clip(np.rint(values), 0, 255).astype(np.uint8)
        return result


def _check_dimensions(image: GrayImage, code: FractalCode) -> None:
    if (image.width, image.height) != (code.width, code.height):
        raise DecodeError(f"Image {image.width}x{image.height} does not match code {code.width}x{code.height}")


def iterate_once(image: GrayImage, code: FractalCode) -> GrayImage:
    _check_dimensions(image, code)
    return GrayImage.from_array(DecodePlan(code).apply(image.data))


@dataclass(frozen=True)
class DecodeResult:
    image: GrayImage
    iterations_used: int
    final_delta: float
    deltas: list[float] = field(default_factory=list)


def decode(code: FractalCode, settings: Optional[DecodeSettings] = None) -> DecodeResult:
    settings = settings or DecodeSettings()
    plan = DecodePlan(code)
    current = np.full((code.height, code.width), settings.initial_gray, dtype=np.uint8)
    deltas: list[float] = []
    for iteration in range(1, settings.iterations + 1):
        following = plan.apply(current)
        delta = float(np.max(np.abs(following.astype(np.int16) - current.astype(np.int16))))
        deltas.append(delta)
        current = following
        logger.debug(f"iteration {iteration}: max delta {delta}")
        if delta < settings.convergence_epsilon:
            logger.info(f"converged after {iteration} iterations")
            break
    return DecodeResult(image=GrayImage.from_array(current), iterations_used=len(deltas),
                        final_delta=deltas[-1], deltas=deltas)

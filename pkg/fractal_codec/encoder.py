from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
from logzero import logger
from numpy.lib.stride_tricks import sliding_window_view

from .codeformat import O_RANGE, dequantize_o_array, quantize_o_array, quantize_s_array
from .entropy_pool import DomainPool, PoolError, build_domain_pool
from .model import (EncoderConfig, EncodeStats, FractalCode, SMode, SSchedule, TransformRecord, level_step,
                    quadtree_key)
from .pixmap import GrayImage

# Candidate errors are compared at this many decimals so rounding noise cannot break exact ties.
ERROR_DECIMALS = 6
CHUNK_ELEMENTS = 1 << 19
# A least-squares optimum this close to a reconstruction point is treated as exactly on it.
GRID_SLACK = 1e-9


class EncodeError(ValueError):
    pass


def _check_pair(r: npt.NDArray[Any], d: npt.NDArray[Any]) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    if np.shape(r) != np.shape(d):
        raise EncodeError(f"Range {np.shape(r)} and domain {np.shape(d)} sizes differ")
    return np.asarray(r, dtype=np.float64).ravel(), np.asarray(d, dtype=np.float64).ravel()


def _collage_error(r: npt.NDArray[np.float64], d: npt.NDArray[np.float64], s: float, o: float) -> float:
    residual = s * d + o - r
    return float(np.dot(residual, residual))


def optimal_so(r: npt.NDArray[Any], d: npt.NDArray[Any], s_max: float = 1.0) -> tuple[float, float, float]:
    """Least-squares contrast and offset, s clamped to [0, s_max], o clamped to [-255, 255]."""
    r_values, d_values = _check_pair(r, d)
    r_mean = float(r_values.mean())
    d_mean = float(d_values.mean())
    d_centered = d_values - d_mean
    norm_sq = float(np.dot(d_centered, d_centered))
    if norm_sq == 0:
        s = 0.0
    else:
        s = float(np.dot(r_values - r_mean, d_centered)) / norm_sq
        s = min(max(s, 0.0), s_max)
    o = min(max(r_mean - s * d_mean, -O_RANGE), O_RANGE)
    return s, o, _collage_error(r_values, d_values, s, o)


def fixed_s_match(r: npt.NDArray[Any], d: npt.NDArray[Any], s: float) -> tuple[float, float]:
    r_values, d_values = _check_pair(r, d)
    o = min(max(float(r_values.mean()) - s * float(d_values.mean()), -O_RANGE), O_RANGE)
    return o, _collage_error(r_values, d_values, s, o)


@dataclass(frozen=True)
class RangeMatch:
    entry: int
    domain_x: int
    domain_y: int
    isometry: int
    s_index: int
    s: float
    o_code: int
    o: float
    error: float


@dataclass(frozen=True)
class _Matches:
    entries: npt.NDArray[np.int64]
    s_indices: npt.NDArray[np.int64]
    o_codes: npt.NDArray[np.int64]
    s_values: npt.NDArray[np.float64]
    errors: npt.NDArray[np.float64]


class RangeMatcher:
    """Matches stacks of range blocks against one immutable domain pool."""

    def __init__(self, pool: DomainPool, mode: SMode, candidates: tuple[float, ...], s_max: float) -> None:
        if len(pool) == 0:
            raise EncodeError("Empty domain pool")
        self.pool = pool
        self.mode = mode
        self.candidates = np.asarray(candidates, dtype=np.float64)
        self.s_max = s_max
        self.domains = pool.decimated.reshape(len(pool), -1)
        self.d_sum = self.domains.sum(axis=1)
        self.d_sq = np.einsum('ij,ij->i', self.domains, self.domains)
        self.d_mean = pool.means
        self.norm_sq = pool.centered_norm_sq
        width = 2 if mode == SMode.LEAST_SQUARES else len(candidates)
        self.chunk = max(1, CHUNK_ELEMENTS // (len(pool) * width))

    def match(self, ranges: npt.NDArray[Any], workers: int = 1) -> _Matches:
        flat = np.asarray(ranges, dtype=np.float64).reshape(len(ranges), -1)
        if flat.shape[1] != self.domains.shape[1]:
            raise EncodeError(f"Range blocks of {flat.shape[1]} pixels against domains of {self.domains.shape[1]}")
        chunks = [flat[start:start + self.chunk] for start in range(0, len(flat), self.chunk)]
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                parts = list(executor.map(self._match_chunk, chunks))
        else:
            parts = [self._match_chunk(chunk) for chunk in chunks]
        if not parts:
            empty_int = np.zeros(0, dtype=np.int64)
            return _Matches(empty_int, empty_int, empty_int, np.zeros(0), np.zeros(0))
        return _Matches(*(np.concatenate([getattr(part, name) for part in parts])
                          for name in ('entries', 's_indices', 'o_codes', 's_values', 'errors')))

    def _contrast(self, r_sum: npt.NDArray[np.float64],
                  cross: npt.NDArray[np.float64]) -> tuple[npt.NDArray[Any], npt.NDArray[Any], npt.NDArray[Any]]:
        """Per (range, entry, choice): clamped optimal s, a quantized index, and the quantized value.

        Least squares offers the two grid points bracketing the optimum, lower first.
        """
        if self.mode != SMode.LEAST_SQUARES:
            shape = (r_sum.shape[0], len(self.pool), len(self.candidates))
            s_index = np.broadcast_to(np.arange(len(self.candidates)), shape)
            s_quant = np.broadcast_to(self.candidates, shape)
            return s_quant, s_index, s_quant
        centered_cross = cross - r_sum[:, None] * self.d_mean[None, :]
        with np.errstate(divide='ignore', invalid='ignore'):
            s_opt = np.where(self.norm_sq > 0, centered_cross / self.norm_sq, 0.0)
        s_opt = np.clip(s_opt, 0.0, self.s_max)[:, :, None]
        nearest = quantize_s_array(s_opt, self.s_max)
        on_grid = np.abs(self.candidates[nearest] - s_opt) <= GRID_SLACK
        lower = np.clip(np.where(self.candidates[nearest] > s_opt, nearest - 1, nearest), 0, len(self.candidates) - 2)
        # An optimum on a grid point offers that point twice, so argmin keeps it.
        s_index = np.concatenate([np.where(on_grid, nearest, lower), np.where(on_grid, nearest, lower + 1)], axis=2)
        return np.broadcast_to(s_opt, s_index.shape), s_index, self.candidates[s_index]

    def _match_chunk(self, flat: npt.NDArray[np.float64]) -> _Matches:
        n = flat.shape[1]
        r_sum = flat.sum(axis=1)
        r_sq = np.einsum('ij,ij->i', flat, flat)
        cross = flat @ self.domains.T
        s_opt, s_index, s = self._contrast(r_sum, cross)

        r_mean = (r_sum / n)[:, None, None]
        o = np.clip(r_mean - s * self.d_mean[None, :, None], -O_RANGE, O_RANGE)
        o_code = quantize_o_array(o)
        o_q = dequantize_o_array(o_code)

        # Sum of (s d_i + o - r_i)^2 expanded over cached block sums.
        errors = (s * s * self.d_sq[None, :, None]
                  + 2 * s * o_q * self.d_sum[None, :, None]
                  - 2 * s * cross[:, :, None]
                  + n * o_q * o_q
                  - 2 * o_q * r_sum[:, None, None]
                  + r_sq[:, None, None])
        ranked = np.round(np.maximum(errors, 0.0), ERROR_DECIMALS).reshape(len(flat), -1)
        best = np.argmin(ranked, axis=1)
        width = errors.shape[2]
        entries = best // width
        choice = best % width
        rows = np.arange(len(flat))

        chosen_s = s[rows, entries, choice]
        chosen_o = o_q[rows, entries, choice]
        residual = chosen_s[:, None] * self.domains[entries] + chosen_o[:, None] - flat
        return _Matches(entries=entries.astype(np.int64),
                        s_indices=np.asarray(s_index[rows, entries, choice], dtype=np.int64),
                        o_codes=o_code[rows, entries, choice],
                        s_values=np.asarray(s_opt[rows, entries, choice], dtype=np.float64),
                        errors=np.einsum('ij,ij->i', residual, residual))


def match_range(r: npt.NDArray[Any], pool: DomainPool, mode: SMode, candidates: tuple[float, ...],
                s_max: float = 1.0) -> RangeMatch:
    """Best (entry, s, o) for one range block; ties go to the earlier entry, then the smaller s index."""
    block = np.asarray(r, dtype=np.float64)
    if block.shape != (pool.range_size, pool.range_size):
        raise EncodeError(f"Range block {block.shape} does not match pool range size {pool.range_size}")
    found = RangeMatcher(pool, mode, candidates, s_max).match(block[None])
    entry = int(found.entries[0])
    s_index = int(found.s_indices[0])
    o_code = int(found.o_codes[0])
    return RangeMatch(entry=entry,
                      domain_x=int(pool.origins[entry, 0]),
                      domain_y=int(pool.origins[entry, 1]),
                      isometry=int(pool.isometries[entry]),
                      s_index=s_index,
                      s=float(candidates[s_index]),
                      o_code=o_code,
                      o=float(dequantize_o_array(o_code)),
                      error=float(found.errors[0]))


def _range_blocks(image: GrayImage, positions: list[tuple[int, int]], size: int) -> npt.NDArray[np.float64]:
    if not positions:
        return np.zeros((0, size, size))
    windows = sliding_window_view(image.data, (size, size))
    xs = np.array([x for x, _ in positions])
    ys = np.array([y for _, y in positions])
    return windows[ys, xs].astype(np.float64)


class Encoder:
    def __init__(self, config: EncoderConfig) -> None:
        self.config = config
        self.s_max = config.stored_s_max()
        self.step = config.top_step()
        self.schedule = SSchedule.for_mode(config.s_mode, config.levels(), self.s_max)
        self.workers = config.workers or os.cpu_count() or 1

    def encode(self, image: GrayImage) -> tuple[FractalCode, EncodeStats]:
        config = self.config
        if image.width % config.max_range or image.height % config.max_range:
            raise EncodeError(f"Image {image.width}x{image.height} is not divisible by max_range {config.max_range}")
        if 2 * config.min_range > min(image.width, image.height):
            raise EncodeError(f"Image {image.width}x{image.height} cannot hold a {2 * config.min_range}-pixel domain")

        started = time.perf_counter()
        stats = EncodeStats()
        records: list[TransformRecord] = []
        pending = [(x, y) for y in range(0, image.height, config.max_range)
                   for x in range(0, image.width, config.max_range)]
        for size in config.levels():
            stats.ranges_per_level[size] = len(pending)
            stats.leaves_per_level[size] = 0
            stats.s_values[size] = []
            if pending:
                pending = self._encode_level(image, size, pending, records, stats)
        assert not pending, f"{len(pending)} ranges left uncoded below min_range"

        records.sort(key=lambda r: quadtree_key(r.range_x, r.range_y, r.range_size, config.max_range))
        stats.seconds = time.perf_counter() - started
        stats.total_error = sum(r.error for r in records)
        code = FractalCode(width=image.width, height=image.height,
                           max_range=config.max_range, min_range=config.min_range,
                           s_mode=config.s_mode, s_max=self.s_max, step=self.step,
                           records=tuple(records))
        return code, stats

    def _encode_level(self, image: GrayImage, size: int, pending: list[tuple[int, int]],
                      records: list[TransformRecord], stats: EncodeStats) -> list[tuple[int, int]]:
        config = self.config
        last_level = size == config.min_range
        half = size // 2
        if 2 * size > min(image.width, image.height):
            logger.warning(f"level {size}: domain of {2 * size} pixels exceeds the image, splitting all ranges")
            return [(x + dx, y + dy) for x, y in pending for dy in (0, half) for dx in (0, half)]

        try:
            pool = build_domain_pool(image, 2 * size, level_step(self.step, config.max_range, size),
                                     config.pool_selection)
        except PoolError as e:
            raise EncodeError(f"level {size}: {e}") from e
        stats.pool_entries_per_level[size] = len(pool)

        matcher = RangeMatcher(pool, config.s_mode, self.schedule.level(size), self.s_max)
        found = matcher.match(_range_blocks(image, pending, size), self.workers)
        stats.matched_error_per_level[size] = float(found.errors.sum())
        accepted = np.sqrt(found.errors / (size * size)) <= config.rms_tolerance
        if last_level:
            accepted[:] = True

        remaining = []
        for index, (x, y) in enumerate(pending):
            if not accepted[index]:
                remaining.extend((x + dx, y + dy) for dy in (0, half) for dx in (0, half))
                continue
            entry = int(found.entries[index])
            records.append(TransformRecord(range_x=x, range_y=y, range_size=size,
                                           domain_x=int(pool.origins[entry, 0]),
                                           domain_y=int(pool.origins[entry, 1]),
                                           isometry=int(pool.isometries[entry]),
                                           s_index=int(found.s_indices[index]),
                                           o_code=int(found.o_codes[index]),
                                           error=float(found.errors[index])))
            stats.s_values[size].append(float(found.s_values[index]))
        stats.leaves_per_level[size] = int(np.count_nonzero(accepted))
        logger.info(f"level {size}: {len(pending)} ranges, {stats.leaves_per_level[size]} coded, "
                    f"pool {len(pool)} entries ({pool.retained_origins} origins)")
        return remaining


def encode(image: GrayImage, config: Optional[EncoderConfig] = None) -> tuple[FractalCode, EncodeStats]:
    return Encoder(config or EncoderConfig()).encode(image)

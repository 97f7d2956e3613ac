from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
import scipy.stats
from logzero import logger
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import gammaln

from .model import MinEntropy, PoolSelection, TopK
from .pixmap import ISOMETRY_COUNT, Block, GrayImage, apply_isometry, decimate


class PoolError(ValueError):
    pass


def _integer_values(block: npt.NDArray[Any]) -> npt.NDArray[np.int64]:
    values = np.asarray(block)
    if np.issubdtype(values.dtype, np.floating) and not np.array_equal(values, np.floor(values)):
        raise PoolError("Entropy is only defined for integer gray levels (raw, undecimated blocks)")
    return values.astype(np.int64).ravel()


def _entropy_from_counts(counts: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
    # Counts are sorted so equal histograms sum in the same order and give identical bits.
    ordered = -np.sort(-counts, axis=-1)
    return np.asarray(scipy.stats.entropy(ordered, axis=-1), dtype=np.float64)


def _stacked_entropy(blocks: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
    """Entropy of every row of a (count, n) integer array."""
    rows, n = blocks.shape
    if rows == 0:
        return np.zeros(0, dtype=np.float64)
    ordered = np.sort(blocks, axis=1)
    new_level = np.ones((rows, n), dtype=np.int64)
    new_level[:, 1:] = ordered[:, 1:] != ordered[:, :-1]
    level_index = np.cumsum(new_level, axis=1) - 1
    flat = (np.arange(rows, dtype=np.int64)[:, None] * n + level_index).ravel()
    counts = np.bincount(flat, minlength=rows * n).reshape(rows, n)
    return _entropy_from_counts(counts)


@dataclass(frozen=True)
class GrayHistogram:
    counts: dict[int, int]
    total: int

    @classmethod
    def from_block(cls, block: npt.NDArray[Any]) -> GrayHistogram:
        values = _integer_values(block)
        levels, occurrences = np.unique(values, return_counts=True)
        counts = {int(level): int(count) for level, count in zip(levels, occurrences)}
        return cls(counts=counts, total=int(values.size))

    def probabilities(self) -> dict[int, float]:
        return {level: count / self.total for level, count in self.counts.items()}

    def entropy(self) -> float:
        row = np.zeros(self.total, dtype=np.int64)
        row[:len(self.counts)] = list(self.counts.values())
        return float(_entropy_from_counts(row[None, :])[0])

    def log_permutation_count(self) -> float:
        counts = np.array(list(self.counts.values()), dtype=np.float64)
        value = float(gammaln(self.total + 1) - np.sum(gammaln(counts + 1)))
        return max(0.0, value)


def block_entropy(block: npt.NDArray[Any]) -> float:
    """Shannon entropy in nats of the block's gray-level histogram."""
    return GrayHistogram.from_block(block).entropy()


def stacked_entropy(blocks: npt.NDArray[Any]) -> npt.NDArray[np.float64]:
    """block_entropy of every row of a (count, n) array, bit-identical to the single-block result."""
    rows = np.asarray(blocks)
    rows = rows.reshape(rows.shape[0], -1)
    return _stacked_entropy(_integer_values(rows).reshape(rows.shape))


def log_permutation_count(block: npt.NDArray[Any]) -> float:
    return GrayHistogram.from_block(block).log_permutation_count()


@dataclass(frozen=True)
class DomainEntry:
    origin_x: int
    origin_y: int
    isometry: int
    decimated: Block
    mean: float
    centered_norm_sq: float
    entropy: float


@dataclass(frozen=True, eq=False)
class DomainPool:
    """Entries are stored as parallel arrays, ordered by (entropy desc, origin row-major, isometry)."""
    domain_size: int
    step: int
    retained_origins: int
    origins: npt.NDArray[np.int64]
    isometries: npt.NDArray[np.int64]
    decimated: Block
    means: npt.NDArray[np.float64]
    centered_norm_sq: npt.NDArray[np.float64]
    entropies: npt.NDArray[np.float64]

    def __len__(self) -> int:
        return int(self.isometries.shape[0])

    @property
    def range_size(self) -> int:
        return self.domain_size // 2

    @property
    def entries(self) -> tuple[DomainEntry, ...]:
        return tuple(self.entry(i) for i in range(len(self)))

    def entry(self, index: int) -> DomainEntry:
        return DomainEntry(origin_x=int(self.origins[index, 0]),
                           origin_y=int(self.origins[index, 1]),
                           isometry=int(self.isometries[index]),
                           decimated=self.decimated[index],
                           mean=float(self.means[index]),
                           centered_norm_sq=float(self.centered_norm_sq[index]),
                           entropy=float(self.entropies[index]))

    def retained(self) -> list[tuple[int, int]]:
        """Retained origins (x, y) in pool order."""
        return [(int(x), int(y)) for x, y in self.origins[::ISOMETRY_COUNT]]


def _select(entropies: npt.NDArray[np.float64], selection: PoolSelection) -> npt.NDArray[np.int64]:
    row_major = np.arange(entropies.shape[0])
    order = np.lexsort((row_major, -entropies))
    if isinstance(selection, TopK):
        return order[:selection.k]
    assert isinstance(selection, MinEntropy), f"Unknown pool selection {selection!r}"
    return order[entropies[order] >= selection.threshold]


def build_domain_pool(image: GrayImage, domain_size: int, step: int, selection: PoolSelection) -> DomainPool:
    if domain_size > min(image.width, image.height):
        raise PoolError(f"Domain size {domain_size} exceeds the {image.width}x{image.height} image")
    if domain_size < 2 or domain_size % 2:
        raise PoolError(f"Domain size must be even and at least 2, got {domain_size}")
    if step < 1:
        raise PoolError(f"Domain step must be at least 1, got {step}")

    windows = sliding_window_view(image.data, (domain_size, domain_size))[::step, ::step]
    rows, columns = windows.shape[:2]
    raw = windows.reshape(rows * columns, domain_size * domain_size).astype(np.int64)
    entropies = stacked_entropy(raw)

    chosen = _select(entropies, selection)
    if chosen.size == 0:
        raise PoolError(f"No domain block of size {domain_size} survived {selection!r}")
    logger.debug(f"domain pool {domain_size}x{domain_size}: {rows * columns} candidates, {chosen.size} retained")

    ys = (chosen // columns) * step
    xs = (chosen % columns) * step
    shrunk = decimate(windows.reshape(rows * columns, domain_size, domain_size)[chosen])
    variants = np.stack([apply_isometry(shrunk, k) for k in range(ISOMETRY_COUNT)], axis=1)
    range_size = domain_size // 2
    decimated = variants.reshape(-1, range_size, range_size)
    means = decimated.mean(axis=(1, 2))
    centered = decimated - means[:, None, None]

    return DomainPool(domain_size=domain_size,
                      step=step,
                      retained_origins=int(chosen.size),
                      origins=np.repeat(np.stack([xs, ys], axis=1), ISOMETRY_COUNT, axis=0).astype(np.int64),
                      isometries=np.tile(np.arange(ISOMETRY_COUNT, dtype=np.int64), chosen.size),
                      decimated=decimated,
                      means=means,
                      centered_norm_sq=np.sum(centered * centered, axis=(1, 2)),
                      entropies=np.repeat(entropies[chosen], ISOMETRY_COUNT))

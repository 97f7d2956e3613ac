from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Union


class ConfigError(ValueError):
    pass


class SMode(str, Enum):
    PREDEFINED = 'predefined'
    SAMPLED10 = 'sampled10'
    LEAST_SQUARES = 'least_squares'

    @classmethod
    def parse(cls, value: str) -> SMode:
        aliases = {'ls': cls.LEAST_SQUARES, 'least-squares': cls.LEAST_SQUARES}
        key = value.strip().casefold()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"Unknown s-mode '{value}'") from None


# Per-level contrast candidates, keyed by range size.
PREDEFINED_S: dict[int, tuple[float, ...]] = {
    32: (0.1,),
    16: (0.1,),
    8: (0.2, 0.4),
    4: (0.3, 0.8),
    2: (0.5, 0.9),
}
SAMPLED10_S: tuple[float, ...] = (0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95)
LEAST_SQUARES_S_LEVELS = 32

S_MAX_RESOLUTION = 10000


@dataclass(frozen=True)
class TopK:
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"Pool size must be at least 1, got {self.k}")


@dataclass(frozen=True)
class MinEntropy:
    threshold: float

    def __post_init__(self) -> None:
        if self.threshold < 0:
            raise ConfigError(f"Entropy threshold must be non-negative, got {self.threshold}")


PoolSelection = Union[TopK, MinEntropy]


def is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


def quadtree_levels(max_range: int, min_range: int) -> list[int]:
    result = []
    size = max_range
    while size >= min_range:
        result.append(size)
        size //= 2
    return result


def level_step(top_step: int, max_range: int, range_size: int) -> int:
    return max(1, top_step * range_size // max_range)


def domain_positions(extent: int, range_size: int, step: int) -> int:
    """Number of domain origins along one axis for domains of size 2B."""
    domain_size = 2 * range_size
    if domain_size > extent:
        return 0
    return (extent - domain_size) // step + 1


def quadtree_key(x: int, y: int, size: int, max_range: int) -> tuple[int, ...]:
    """Depth-first scan position: top blocks row-major, children TL, TR, BL, BR."""
    digits = [y // max_range, x // max_range]
    current = max_range
    while current > size:
        half = current // 2
        digits.append(2 * ((y % current) // half) + (x % current) // half)
        current = half
    return tuple(digits)


@dataclass(frozen=True)
class SSchedule:
    candidates: Mapping[int, tuple[float, ...]]

    @classmethod
    def for_mode(cls, mode: SMode, levels: list[int], s_max: float) -> SSchedule:
        candidates: dict[int, tuple[float, ...]] = {}
        for level in levels:
            if mode == SMode.PREDEFINED:
                values = tuple(min(s, s_max) for s in PREDEFINED_S[level])
            elif mode == SMode.SAMPLED10:
                values = tuple(min(s, s_max) for s in SAMPLED10_S)
            else:
                last = LEAST_SQUARES_S_LEVELS - 1
                values = tuple(s_max * k / last for k in range(LEAST_SQUARES_S_LEVELS))
            candidates[level] = values
        return cls(candidates)

    def level(self, range_size: int) -> tuple[float, ...]:
        return self.candidates[range_size]

    def counts(self) -> list[int]:
        return [len(self.candidates[level]) for level in sorted(self.candidates, reverse=True)]


@dataclass(frozen=True)
class EncoderConfig:
    max_range: int = 16
    min_range: int = 2
    rms_tolerance: float = 8.0
    pool_selection: PoolSelection = TopK(256)
    domain_step_factor: float = 1.0
    s_mode: SMode = SMode.PREDEFINED
    s_max: float = 1.0
    decode_iterations: int = 12
    workers: Optional[int] = None

    def __post_init__(self) -> None:
        self._check_ranges()
        self._check_search()

    def _check_ranges(self) -> None:
        if not is_power_of_two(self.max_range) or not is_power_of_two(self.min_range):
            raise ConfigError(f"Range sizes must be powers of two, got {self.max_range} and {self.min_range}")
        if self.min_range < 2 or self.max_range > 32:
            raise ConfigError(f"Range sizes must lie in [2, 32], got {self.min_range}..{self.max_range}")
        if self.min_range > self.max_range:
            raise ConfigError(f"min_range {self.min_range} exceeds max_range {self.max_range}")

    def _check_search(self) -> None:
        if self.rms_tolerance < 0:
            raise ConfigError(f"rms_tolerance must be non-negative, got {self.rms_tolerance}")
        if not 0 < self.s_max <= 1:
            raise ConfigError(f"s_max must lie in (0, 1], got {self.s_max}")
        if round(self.s_max * S_MAX_RESOLUTION) == 0:
            raise ConfigError(f"s_max {self.s_max} is below the stored resolution")
        if self.domain_step_factor <= 0:
            raise ConfigError(f"domain_step_factor must be positive, got {self.domain_step_factor}")
        if self.decode_iterations < 1:
            raise ConfigError(f"decode_iterations must be at least 1, got {self.decode_iterations}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")

    def levels(self) -> list[int]:
        return quadtree_levels(self.max_range, self.min_range)

    def top_step(self) -> int:
        return max(1, round(self.domain_step_factor * self.max_range))

    def stored_s_max(self) -> float:
        return round(self.s_max * S_MAX_RESOLUTION) / S_MAX_RESOLUTION


@dataclass(frozen=True)
class DecodeSettings:
    iterations: int = 12
    initial_gray: int = 128
    convergence_epsilon: float = 0.5

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError(f"iterations must be at least 1, got {self.iterations}")
        if not 0 <= self.initial_gray <= 255:
            raise ConfigError(f"initial_gray must be a gray level, got {self.initial_gray}")
        if self.convergence_epsilon < 0:
            raise ConfigError(f"convergence_epsilon must be non-negative, got {self.convergence_epsilon}")


@dataclass(frozen=True)
class TransformRecord:
    range_x: int
    range_y: int
    range_size: int
    domain_x: int
    domain_y: int
    isometry: int
    s_index: int
    o_code: int
    error: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class FractalCode:
    width: int
    height: int
    max_range: int
    min_range: int
    s_mode: SMode
    s_max: float
    step: int
    records: tuple[TransformRecord, ...]

    @property
    def schedule(self) -> SSchedule:
        return SSchedule.for_mode(self.s_mode, self.levels(), self.s_max)

    def levels(self) -> list[int]:
        return quadtree_levels(self.max_range, self.min_range)

    def step_for(self, range_size: int) -> int:
        return level_step(self.step, self.max_range, range_size)

    def leaves_per_level(self) -> dict[int, int]:
        result = {level: 0 for level in self.levels()}
        for record in self.records:
            result[record.range_size] += 1
        return result

    def total_error(self) -> float:
        return sum(record.error for record in self.records)


@dataclass
class EncodeStats:
    leaves_per_level: dict[int, int] = field(default_factory=dict)
    ranges_per_level: dict[int, int] = field(default_factory=dict)
    pool_entries_per_level: dict[int, int] = field(default_factory=dict)
    # Best-match collage error summed over every range matched at a level, accepted or split.
    matched_error_per_level: dict[int, float] = field(default_factory=dict)
    s_values: dict[int, list[float]] = field(default_factory=dict)
    seconds: float = 0.0
    total_error: float = 0.0

    @property
    def partition_error(self) -> float:
        """Matched error of the coarsest searched level, whose ranges do not depend on the pool.

        Nonincreasing as the pool grows; total_error follows the adaptive quadtree and is not.
        """
        if not self.matched_error_per_level:
            return 0.0
        return self.matched_error_per_level[max(self.matched_error_per_level)]

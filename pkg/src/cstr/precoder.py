"""Time-reversal (TR) and circular-shift TR (CSTR) transmit prefilters.

Canonical construction order is reverse -> normalize -> shift
(:func:`build_prefilter`). Shifting is a permutation, so the order does not
change energies, but the metadata always records it this way.
"""

from __future__ import annotations

import enum
import math
import numbers
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .channel import Cir
from .errors import DegenerateChannelError, InvalidArgumentError

__all__ = [
    "Direction",
    "ShiftSpec",
    "Prefilter",
    "time_reverse",
    "circular_shift",
    "percent_to_taps",
    "normalize_equal_power",
    "compose_transmit",
    "build_prefilter",
    "NO_SHIFT",
]


class Direction(str, enum.Enum):
    NONE = "none"
    LEFT = "left"
    RIGHT = "right"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ShiftSpec:
    """Circular shift of ``amount_taps`` in ``direction``.

    ``direction`` is NONE exactly when ``amount_taps`` is 0. The upper bound
    ``amount_taps <= N - 1`` depends on the prefilter and is checked by
    :func:`circular_shift`.
    """

    direction: Direction = Direction.NONE
    amount_taps: int = 0

    def __post_init__(self):
        try:
            direction = Direction(self.direction)
        except ValueError:
            raise InvalidArgumentError(f"unknown shift direction {self.direction!r}") from None
        if isinstance(self.amount_taps, bool) or int(self.amount_taps) != self.amount_taps:
            raise InvalidArgumentError(f"shift amount must be an integer, got {self.amount_taps!r}")
        amount = int(self.amount_taps)
        if direction is Direction.NONE and amount != 0:
            raise InvalidArgumentError("direction 'none' requires amount_taps = 0")
        if direction is not Direction.NONE and amount < 1:
            raise InvalidArgumentError(f"{direction} shift needs amount_taps >= 1, got {amount}")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "amount_taps", amount)

    @classmethod
    def from_percent(cls, direction, percent: float, n_taps: int) -> "ShiftSpec":
        """Shift of ``percent_to_taps(percent, n_taps)`` taps; a zero-tap result is no shift."""
        direction = Direction(direction)
        taps = percent_to_taps(percent, n_taps)
        if taps == 0 or direction is Direction.NONE:
            return NO_SHIFT
        return cls(direction, taps)

    @property
    def offset(self) -> int:
        """Signed rotation: +l for right, -l for left."""
        if self.direction is Direction.RIGHT:
            return self.amount_taps
        if self.direction is Direction.LEFT:
            return -self.amount_taps
        return 0

    def validate_for(self, n_taps: int) -> None:
        if self.direction is not Direction.NONE and not (1 <= self.amount_taps <= n_taps - 1):
            raise InvalidArgumentError(
                f"{self.direction} shift of {self.amount_taps} taps is outside [1, {n_taps - 1}]"
            )


NO_SHIFT = ShiftSpec()


@dataclass(frozen=True, eq=False)
class Prefilter:
    taps: np.ndarray
    source_id: str
    shift: ShiftSpec = NO_SHIFT
    normalized: bool = False

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.complex128, copy=True).reshape(-1)
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    @property
    def n_taps(self) -> int:
        return int(self.taps.size)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.taps) ** 2))


def time_reverse(h: Cir) -> Prefilter:
    """``taps[i] = conj(h.taps[N - 1 - i])``, not normalized."""
    return Prefilter(taps=np.conj(h.taps[::-1]), source_id=h.id)


def circular_shift(p: Prefilter, spec: ShiftSpec) -> Prefilter:
    """Rotate taps: right gives ``out[i] = p[(i - l) % N]``, left ``out[i] = p[(i + l) % N]``.

    Applying a shift to an already shifted prefilter records the net rotation.
    """
    n = p.n_taps
    spec.validate_for(n)
    if spec.direction is Direction.NONE:
        return p
    shifted = np.roll(p.taps, spec.offset)
    net = (p.shift.offset + spec.offset) % n
    if net == 0:
        net_spec = NO_SHIFT
    elif spec.direction is Direction.RIGHT:
        net_spec = ShiftSpec(Direction.RIGHT, net)
    else:
        net_spec = ShiftSpec(Direction.LEFT, n - net)
    return replace(p, taps=shifted, shift=net_spec)


def percent_to_taps(percent: float, n_taps: int) -> int:
    """``round(percent / 100 * n_taps)`` with halves away from zero, clamped to ``[0, N - 1]``."""
    if isinstance(percent, bool) or not (isinstance(percent, numbers.Real) and 0 <= percent <= 100):
        raise InvalidArgumentError(f"shift percent must be within [0, 100], got {percent!r}")
    if int(n_taps) != n_taps or n_taps < 1:
        raise InvalidArgumentError(f"n_taps must be a positive integer, got {n_taps!r}")
    taps = math.floor(percent * n_taps / 100.0 + 0.5)
    return int(min(max(taps, 0), n_taps - 1))


def normalize_equal_power(p: Prefilter) -> Prefilter:
    """Scale to unit energy (division by the Frobenius norm)."""
    norm = float(np.linalg.norm(p.taps))
    if norm == 0.0:
        raise DegenerateChannelError(f"prefilter from CIR {p.source_id!r} has zero energy")
    return replace(p, taps=p.taps / norm, normalized=True)


def _check_transmit_set(filters: Sequence[Prefilter]) -> int:
    if len(filters) == 0:
        raise InvalidArgumentError("compose_transmit needs at least one prefilter")
    n = filters[0].n_taps
    for f in filters:
        if f.n_taps != n:
            raise InvalidArgumentError(
                f"prefilter lengths differ: {f.source_id!r} has {f.n_taps}, expected {n}"
            )
        if not f.normalized:
            raise InvalidArgumentError(f"prefilter from {f.source_id!r} is not normalized")
    return n


def composite_norm(filters: Sequence[Prefilter]) -> float:
    """Norm of the summed prefilters; the common divisor applied by :func:`compose_transmit`."""
    _check_transmit_set(filters)
    total = np.sum([f.taps for f in filters], axis=0)
    norm = float(np.linalg.norm(total))
    if norm == 0.0:
        raise DegenerateChannelError("prefilters cancel exactly; composite has zero energy")
    return norm


def compose_transmit(filters: Sequence[Prefilter]) -> np.ndarray:
    """Sum of all prefilters rescaled to unit total energy."""
    norm = composite_norm(filters)
    return np.sum([f.taps for f in filters], axis=0) / norm


def build_prefilter(h: Cir, shift: ShiftSpec = NO_SHIFT) -> Prefilter:
    """Canonical CSTR prefilter: reverse, normalize, then shift."""
    return circular_shift(normalize_equal_power(time_reverse(h)), shift)

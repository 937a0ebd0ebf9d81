"""Signal/Image peak measurement, SIR and empirical CDFs.

Peaks are read at analytically known indices, never searched for. For a
length-N channel and a shift of ``l`` taps the Signal peak sits at
``N-1+l`` (right) or ``N-1-l`` (left), and the Image peak exactly N taps
before (right) or after (left) it. A cross-term sidelobe can exceed the
coherent peak, so an argmax would sometimes measure the wrong quantity;
:attr:`PeakReport.argmax_matches` keeps that visible instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .channel import Cir
from .errors import InvalidArgumentError
from .precoder import Direction, ShiftSpec, build_prefilter, compose_transmit, NO_SHIFT
from .propagation import RxSignal, UserLink, receive

__all__ = [
    "PeakReport",
    "SirReport",
    "expected_peak_indices",
    "locate_peaks",
    "signal_image_split",
    "compute_sir",
    "sir_db",
    "empirical_cdf",
    "split_finite",
]


@dataclass(frozen=True)
class PeakReport:
    signal_peak_index: int
    signal_peak_power: float
    no_shift_peak_power: float
    image_peak_index: int | None = None
    image_peak_power: float | None = None
    argmax_matches: bool = True


@dataclass(frozen=True)
class SirReport:
    user_id: int
    signal_power_at_peak: float
    interference_power_at_peak: float
    sir_db: float


def expected_peak_indices(shift: ShiftSpec, n_taps: int) -> tuple[int, int | None]:
    """(Signal index, Image index or None) for a length-``n_taps`` channel."""
    shift.validate_for(n_taps)
    centre = n_taps - 1
    if shift.direction is Direction.RIGHT:
        signal = centre + shift.amount_taps
        return signal, signal - n_taps
    if shift.direction is Direction.LEFT:
        signal = centre - shift.amount_taps
        return signal, signal + n_taps
    return centre, None


def locate_peaks(
    rx: RxSignal,
    shift: ShiftSpec,
    n_taps: int,
    no_shift_peak_power: float | None = None,
) -> PeakReport:
    """Read Signal and Image peak powers from ``|rx.signal_part|**2``.

    ``no_shift_peak_power`` is the reference used for normalization. When
    omitted it is reconstructed as ``(|signal| + |image|)**2``, which equals
    the unshifted peak power for a single-user, TR-built prefilter.
    """
    if len(rx) != 2 * n_taps - 1:
        raise InvalidArgumentError(f"received signal has {len(rx)} samples, expected {2 * n_taps - 1}")
    sig_idx, img_idx = expected_peak_indices(shift, n_taps)
    power = np.abs(rx.signal_part) ** 2
    sig_power = float(power[sig_idx])
    img_power = None if img_idx is None else float(power[img_idx])
    if no_shift_peak_power is None:
        no_shift_peak_power = (math.sqrt(sig_power) + math.sqrt(img_power or 0.0)) ** 2
    return PeakReport(
        signal_peak_index=sig_idx,
        signal_peak_power=sig_power,
        no_shift_peak_power=float(no_shift_peak_power),
        image_peak_index=img_idx,
        image_peak_power=img_power,
        argmax_matches=bool(int(np.argmax(power)) == sig_idx),
    )


def _single_user_rx(h: Cir, shift: ShiftSpec, method: str) -> RxSignal:
    p = build_prefilter(h, shift)
    link = UserLink(0, h, p)
    return receive(compose_transmit([p]), [link], 0, method=method)


def signal_image_split(h: Cir, shift: ShiftSpec, method: str = "direct") -> tuple[float, float]:
    """Signal and Image peak amplitudes (magnitudes) of a single-user CSTR link.

    The amplitudes are the energies of the unshifted and shifted channel
    taps divided by ``||h||``, so they always sum to the unshifted peak
    amplitude ``||h||``.
    """
    rx = _single_user_rx(h, shift, method)
    peaks = locate_peaks(rx, shift, h.n_taps)
    image = 0.0 if peaks.image_peak_power is None else math.sqrt(peaks.image_peak_power)
    return math.sqrt(peaks.signal_peak_power), image


def no_shift_peak_amplitude(h: Cir, method: str = "direct") -> float:
    return signal_image_split(h, NO_SHIFT, method)[0]


def sir_db(signal_power: float, interference_power: float) -> float:
    """``10 log10(S / I)``; zero interference gives ``+inf``."""
    if interference_power == 0.0:
        return math.inf
    if signal_power == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal_power / interference_power)


def compute_sir(rx: RxSignal, peak: PeakReport, user_id: int = 0) -> SirReport:
    """SIR at the Signal peak instant (the decision time)."""
    t = peak.signal_peak_index
    if not (0 <= t < len(rx)):
        raise InvalidArgumentError(f"peak index {t} outside received signal")
    s = float(abs(rx.signal_part[t]) ** 2)
    i = float(abs(rx.interference_part[t]) ** 2)
    return SirReport(user_id=user_id, signal_power_at_peak=s, interference_power_at_peak=i, sir_db=sir_db(s, i))


def split_finite(values: Iterable[float]) -> tuple[list[float], int]:
    """Finite values and the count of infinite sentinels."""
    finite, n_inf = [], 0
    for v in values:
        v = float(v)
        if math.isnan(v):
            raise InvalidArgumentError("NaN in CDF input")
        if math.isinf(v):
            n_inf += 1
        else:
            finite.append(v)
    return finite, n_inf


def empirical_cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Sorted ``(value, P[X <= value])`` pairs over the finite values.

    Tied values all carry the higher probability. Infinite entries are
    dropped; use :func:`split_finite` to count them.
    """
    if len(values) == 0:
        raise InvalidArgumentError("empirical_cdf of an empty sequence")
    finite, _ = split_finite(values)
    if not finite:
        raise InvalidArgumentError("empirical_cdf needs at least one finite value")
    x = np.sort(np.asarray(finite, dtype=float))
    n = x.size
    counts = np.searchsorted(x, x, side="right")
    return [(float(v), float(c) / n) for v, c in zip(x, counts)]

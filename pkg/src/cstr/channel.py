"""Discrete channel impulse responses: construction, synthesis and file I/O.

A CIR is a finite sequence of complex tap amplitudes at a uniform delay
spacing, ``h[i]`` at delay ``i * tap_spacing``. Synthetic CIRs stand in for
measured ones; measured data enters through :func:`cir_from_freq_response`
(IDFT of a vector-network-analyzer sweep) or through the text formats
handled by :func:`load_cir_file` / :func:`load_freq_response_file`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, InvalidArgumentError

__all__ = [
    "Cir",
    "FreqResponse",
    "ChannelEnsemble",
    "generate_synthetic_cir",
    "synthetic_ensemble",
    "cir_from_freq_response",
    "load_cir_file",
    "save_cir_file",
    "format_cir_text",
    "load_freq_response_file",
    "save_freq_response_file",
    "DEFAULT_N_TAPS",
    "DEFAULT_TAP_SPACING",
]

# 0.7-2 GHz at 2.24 MHz gives 581 points; 580 keeps the tap count even.
DEFAULT_N_TAPS = 580
DEFAULT_F_STEP = 2.24e6
DEFAULT_TAP_SPACING = 1.0 / (DEFAULT_N_TAPS * DEFAULT_F_STEP)

# Default synthetic ensemble: 35 positions, delayed onset with a soft
# leading edge, exponential decay after the first arrival.
DEFAULT_N_CIRS = 35
DEFAULT_DECAY = 40.0
DEFAULT_ONSET = 120
DEFAULT_RISE = 20.0
DEFAULT_SEED = 2011


def _frozen(values, dtype=np.complex128) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Cir:
    """Channel impulse response ``h(t) = sum_i taps[i] delta(t - i*tap_spacing)``.

    Parameters
    ----------
    taps : array_like of complex
        Tap amplitudes, at least one, all finite.
    tap_spacing : float
        Seconds between consecutive taps.
    id : str
        Opaque label (position or ensemble index).
    """

    taps: np.ndarray
    tap_spacing: float = DEFAULT_TAP_SPACING
    id: str = "0"

    def __post_init__(self):
        taps = _frozen(self.taps)
        if taps.size < 1:
            raise InvalidArgumentError("a CIR needs at least one tap")
        if not np.all(np.isfinite(taps)):
            raise InvalidArgumentError(f"CIR {self.id!r} has non-finite taps")
        spacing = float(self.tap_spacing)
        if not (spacing > 0 and math.isfinite(spacing)):
            raise InvalidArgumentError(f"tap_spacing must be > 0, got {self.tap_spacing!r}")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "tap_spacing", spacing)
        object.__setattr__(self, "id", str(self.id))

    @property
    def n_taps(self) -> int:
        return int(self.taps.size)

    @property
    def delays(self) -> np.ndarray:
        return np.arange(self.n_taps) * self.tap_spacing

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.taps) ** 2))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.taps))

    def __eq__(self, other):
        if not isinstance(other, Cir):
            return NotImplemented
        return (
            self.id == other.id
            and self.tap_spacing == other.tap_spacing
            and np.array_equal(self.taps, other.taps)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FreqResponse:
    """Complex gains on a uniform frequency grid ``f_start + k * f_step``."""

    gains: np.ndarray
    f_start: float
    f_step: float

    def __post_init__(self):
        gains = _frozen(self.gains)
        if not (self.f_step > 0):
            raise FormatError(f"f_step must be > 0, got {self.f_step!r}")
        if not np.all(np.isfinite(gains)):
            raise FormatError("frequency response has non-finite gains")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "f_start", float(self.f_start))
        object.__setattr__(self, "f_step", float(self.f_step))

    @classmethod
    def from_points(cls, frequencies: Sequence[float], gains: Sequence[complex]) -> "FreqResponse":
        """Build from explicit ``(frequency, gain)`` pairs, checking the grid is uniform."""
        freqs = np.asarray(frequencies, dtype=float).reshape(-1)
        gains = np.asarray(gains, dtype=complex).reshape(-1)
        if freqs.size != gains.size:
            raise FormatError(f"{freqs.size} frequencies but {gains.size} gains")
        if freqs.size < 2:
            raise FormatError("need at least two frequency points to define a step")
        steps = np.diff(freqs)
        step = (freqs[-1] - freqs[0]) / (freqs.size - 1)
        if step <= 0 or np.any(steps <= 0):
            raise FormatError("frequencies must be strictly increasing")
        bad = np.flatnonzero(np.abs(steps - step) > 1e-9 * abs(step))
        if bad.size:
            k = int(bad[0])
            raise FormatError(
                f"non-uniform frequency grid between points {k} and {k + 1} "
                f"(step {steps[k]!r}, expected {step!r})"
            )
        return cls(gains=gains, f_start=float(freqs[0]), f_step=float(step))

    @property
    def frequencies(self) -> np.ndarray:
        return self.f_start + self.f_step * np.arange(self.gains.size)

    @property
    def points(self) -> list[tuple[float, complex]]:
        return list(zip(self.frequencies.tolist(), self.gains.tolist()))

    def __len__(self):
        return int(self.gains.size)


@dataclass(frozen=True, eq=False)
class ChannelEnsemble:
    """Ordered CIRs sharing one tap count and one tap spacing.

    ``seed`` is the generator seed for synthetic ensembles and ``None`` for
    ingested data.
    """

    cirs: tuple[Cir, ...]
    seed: int | None = None

    def __post_init__(self):
        cirs = tuple(self.cirs)
        if cirs:
            n, spacing = cirs[0].n_taps, cirs[0].tap_spacing
            for c in cirs[1:]:
                if c.n_taps != n:
                    raise InvalidArgumentError(
                        f"ensemble members differ in tap count: {c.id!r} has {c.n_taps}, expected {n}"
                    )
                if c.tap_spacing != spacing:
                    raise InvalidArgumentError(
                        f"ensemble members differ in tap spacing: {c.id!r} has {c.tap_spacing!r}"
                    )
        object.__setattr__(self, "cirs", cirs)

    @property
    def n_taps(self) -> int:
        return self.cirs[0].n_taps if self.cirs else 0

    @property
    def tap_spacing(self) -> float | None:
        return self.cirs[0].tap_spacing if self.cirs else None

    def tap_matrix(self) -> np.ndarray:
        """All taps stacked as a ``(len(self), n_taps)`` array."""
        return np.stack([c.taps for c in self.cirs]) if self.cirs else np.empty((0, 0), complex)

    def __len__(self):
        return len(self.cirs)

    def __iter__(self):
        return iter(self.cirs)

    def __getitem__(self, i):
        return self.cirs[i]

    def __eq__(self, other):
        if not isinstance(other, ChannelEnsemble):
            return NotImplemented
        return self.seed == other.seed and self.cirs == other.cirs

    __hash__ = None


def _power_envelope(n_taps: int, decay_constant: float, onset_taps: int, rise_constant: float | None):
    i = np.arange(n_taps, dtype=float)
    after = np.exp(-(i - onset_taps) / (2.0 * decay_constant))
    if onset_taps == 0:
        return after
    if rise_constant is None:
        before = np.zeros_like(i)
    else:
        before = np.exp(-(onset_taps - i) / (2.0 * rise_constant))
    return np.where(i >= onset_taps, after, before)


def generate_synthetic_cir(
    n_taps: int,
    decay_constant: float,
    rng_seed: int,
    *,
    onset_taps: int = 0,
    rise_constant: float | None = None,
    tap_spacing: float = DEFAULT_TAP_SPACING,
    id: str | None = None,
) -> Cir:
    """Rayleigh taps under an exponential power-delay profile.

    ``taps[i] = g[i] * exp(-(i - onset_taps) / (2 * decay_constant))`` for
    ``i >= onset_taps``, where ``g`` is complex standard normal (unit mean
    power) drawn from ``numpy.random.default_rng(rng_seed)``. With the
    default ``onset_taps=0`` this is a plain exponential decay from tap 0.

    Taps before the onset follow a rising edge
    ``exp(-(onset_taps - i) / (2 * rise_constant))``, or are zero when
    ``rise_constant`` is None. The onset models the excess delay before the
    first arrival that an IDFT of a measured sweep typically shows.
    """
    if isinstance(n_taps, bool) or int(n_taps) != n_taps or n_taps < 1:
        raise InvalidArgumentError(f"n_taps must be a positive integer, got {n_taps!r}")
    if not (decay_constant > 0 and math.isfinite(decay_constant)):
        raise InvalidArgumentError(f"decay_constant must be > 0, got {decay_constant!r}")
    if int(onset_taps) != onset_taps or not (0 <= onset_taps < n_taps):
        raise InvalidArgumentError(f"onset_taps must be in [0, n_taps), got {onset_taps!r}")
    if rise_constant is not None and not (rise_constant > 0 and math.isfinite(rise_constant)):
        raise InvalidArgumentError(f"rise_constant must be > 0, got {rise_constant!r}")
    n_taps, onset_taps = int(n_taps), int(onset_taps)

    rng = np.random.default_rng(rng_seed)
    g = (rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps)) / math.sqrt(2.0)
    taps = g * _power_envelope(n_taps, decay_constant, onset_taps, rise_constant)
    return Cir(taps=taps, tap_spacing=tap_spacing, id=str(rng_seed) if id is None else id)


def member_seed(seed: int, index: int) -> int:
    """Independent per-member seed derived from an ensemble seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def synthetic_ensemble(
    n_cirs: int = DEFAULT_N_CIRS,
    n_taps: int = DEFAULT_N_TAPS,
    decay_constant: float = DEFAULT_DECAY,
    seed: int = DEFAULT_SEED,
    *,
    onset_taps: int = DEFAULT_ONSET,
    rise_constant: float | None = DEFAULT_RISE,
    tap_spacing: float = DEFAULT_TAP_SPACING,
) -> ChannelEnsemble:
    """Ensemble of ``n_cirs`` synthetic CIRs with ids ``"0" .. str(n_cirs - 1)``."""
    if int(n_cirs) != n_cirs or n_cirs < 1:
        raise InvalidArgumentError(f"n_cirs must be a positive integer, got {n_cirs!r}")
    cirs = tuple(
        generate_synthetic_cir(
            n_taps,
            decay_constant,
            member_seed(seed, i),
            onset_taps=onset_taps,
            rise_constant=rise_constant,
            tap_spacing=tap_spacing,
            id=str(i),
        )
        for i in range(int(n_cirs))
    )
    return ChannelEnsemble(cirs=cirs, seed=int(seed))


def cir_from_freq_response(fr: FreqResponse, id: str = "0") -> Cir:
    """Inverse DFT of a uniformly sampled frequency response.

    ``taps[m] = (1/M) sum_k gains[k] exp(+2j pi k m / M)``, so Parseval reads
    ``sum |taps|^2 = (1/M) sum |gains|^2``. The tap spacing is the inverse
    of the swept bandwidth, ``1 / (M * f_step)``.
    """
    m = len(fr)
    if m < 2:
        raise InvalidArgumentError(f"need at least 2 frequency points, got {m}")
    taps = np.fft.ifft(fr.gains)
    return Cir(taps=taps, tap_spacing=1.0 / (m * fr.f_step), id=id)


# --------------------------------------------------------------------------
# text formats


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _parse_header(line: str, magic: str, keys: Iterable[str], path, lineno: int = 1) -> dict[str, str]:
    parts = line.split()
    if not parts or parts[0] != magic:
        raise FormatError(f"missing {magic} header", line=lineno, path=path)
    fields = {}
    for tok in parts[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise FormatError(f"malformed header field {tok!r}", line=lineno, path=path)
        fields[key] = value
    missing = [k for k in keys if k not in fields]
    if missing:
        raise FormatError(f"header lacks {', '.join(missing)}", line=lineno, path=path)
    return fields


def _parse_pair(line: str, path, lineno: int) -> complex:
    parts = line.split()
    if len(parts) != 2:
        raise FormatError(f"expected '<re> <im>', got {line.strip()!r}", line=lineno, path=path)
    try:
        re_, im_ = float(parts[0]), float(parts[1])
    except ValueError:
        raise FormatError(f"non-numeric tap {line.strip()!r}", line=lineno, path=path) from None
    if not (math.isfinite(re_) and math.isfinite(im_)):
        raise FormatError(f"non-finite tap {line.strip()!r}", line=lineno, path=path)
    return complex(re_, im_)


def _header_int(fields, key, path, minimum=0) -> int:
    try:
        value = int(fields[key])
    except ValueError:
        raise FormatError(f"header {key} must be an integer, got {fields[key]!r}", line=1, path=path) from None
    if value < minimum:
        raise FormatError(f"header {key} must be >= {minimum}, got {value}", line=1, path=path)
    return value


def _header_float(fields, key, path) -> float:
    try:
        value = float(fields[key])
    except ValueError:
        raise FormatError(f"header {key} must be a number, got {fields[key]!r}", line=1, path=path) from None
    if not math.isfinite(value):
        raise FormatError(f"header {key} must be finite", line=1, path=path)
    return value


def _content_lines(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    # a single trailing newline leaves one empty string
    while lines and lines[-1].strip() == "":
        lines.pop()
    return lines


def format_cir_text(ensemble: ChannelEnsemble) -> str:
    """The ``CIRv1`` text for ``ensemble``."""
    if len(ensemble) == 0:
        raise InvalidArgumentError("cannot save an empty ensemble")
    seed = "none" if ensemble.seed is None else str(int(ensemble.seed))
    out = [
        f"CIRv1 n_taps={ensemble.n_taps} tap_spacing={_fmt(ensemble.tap_spacing)} "
        f"count={len(ensemble)} seed={seed}"
    ]
    for cir in ensemble:
        if "\n" in cir.id or "\r" in cir.id:
            raise InvalidArgumentError(f"CIR id {cir.id!r} contains a line break")
        out.append(f"id={cir.id}")
        out.extend(f"{_fmt(t.real)} {_fmt(t.imag)}" for t in cir.taps)
    return "\n".join(out) + "\n"


def save_cir_file(ensemble: ChannelEnsemble, path) -> None:
    """Write ``ensemble`` in the ``CIRv1`` text format (atomically)."""
    _atomic_write(Path(path), format_cir_text(ensemble))


def load_cir_file(path) -> ChannelEnsemble:
    """Read a ``CIRv1`` file. Every structural problem raises :class:`FormatError`
    carrying the 1-based line number."""
    lines = _content_lines(path)
    if not lines:
        raise FormatError("empty file", line=1, path=path)
    fields = _parse_header(lines[0], "CIRv1", ("n_taps", "tap_spacing", "count", "seed"), path)
    n_taps = _header_int(fields, "n_taps", path, minimum=1)
    count = _header_int(fields, "count", path, minimum=1)
    spacing = _header_float(fields, "tap_spacing", path)
    if spacing <= 0:
        raise FormatError("header tap_spacing must be > 0", line=1, path=path)
    seed = None if fields["seed"] == "none" else _header_int(fields, "seed", path)

    cirs: list[Cir] = []
    label: str | None = None
    label_line = 0
    taps: list[complex] = []

    def close_block(lineno):
        if label is None:
            return
        if len(taps) != n_taps:
            raise FormatError(
                f"CIR {label!r} (line {label_line}) has {len(taps)} taps, header says {n_taps}",
                line=lineno,
                path=path,
            )
        cirs.append(Cir(taps=taps, tap_spacing=spacing, id=label))

    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("id="):
            close_block(lineno)
            label, label_line, taps = line[3:], lineno, []
            continue
        if label is None:
            raise FormatError(f"tap row before any id= line: {line.strip()!r}", line=lineno, path=path)
        if len(taps) == n_taps:
            raise FormatError(f"CIR {label!r} has more than {n_taps} taps", line=lineno, path=path)
        taps.append(_parse_pair(line, path, lineno))
    close_block(len(lines) + 1)

    if len(cirs) != count:
        raise FormatError(f"header count={count} but file holds {len(cirs)} CIRs", line=1, path=path)
    return ChannelEnsemble(cirs=tuple(cirs), seed=seed)


def save_freq_response_file(fr: FreqResponse, path) -> None:
    """Write ``fr`` in the ``FRv1`` text format (atomically)."""
    out = [f"FRv1 f_start={_fmt(fr.f_start)} f_step={_fmt(fr.f_step)} count={len(fr)}"]
    out.extend(f"{_fmt(g.real)} {_fmt(g.imag)}" for g in fr.gains)
    _atomic_write(Path(path), "\n".join(out) + "\n")


def load_freq_response_file(path) -> FreqResponse:
    lines = _content_lines(path)
    if not lines:
        raise FormatError("empty file", line=1, path=path)
    fields = _parse_header(lines[0], "FRv1", ("f_start", "f_step", "count"), path)
    f_start = _header_float(fields, "f_start", path)
    f_step = _header_float(fields, "f_step", path)
    count = _header_int(fields, "count", path, minimum=1)
    if f_step <= 0:
        raise FormatError("header f_step must be > 0", line=1, path=path)
    gains = [_parse_pair(line, path, lineno) for lineno, line in enumerate(lines[1:], start=2)]
    if len(gains) != count:
        raise FormatError(f"header count={count} but file holds {len(gains)} rows", line=1, path=path)
    return FreqResponse(gains=gains, f_start=f_start, f_step=f_step)

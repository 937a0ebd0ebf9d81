"""Linear convolution and the multiuser received-signal model.

With a unit impulse as the symbol, the composite transmit waveform is
``tx = sum_k p_k / c`` with ``c = ||sum_k p_k||``. Receiver ``j`` sees
``conv(tx, h_j)``, which splits into its own term ``conv(p_j / c, h_j)`` and
the interference ``sum_{k != j} conv(p_k / c, h_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import Cir
from .errors import InvalidArgumentError
from .precoder import Prefilter, composite_norm

__all__ = ["RxSignal", "UserLink", "convolve", "receive", "contributions_at"]


def _as_sequence(x, name) -> np.ndarray:
    arr = np.asarray(x, dtype=np.complex128).reshape(-1)
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    return arr


def convolve(a, b, method: str = "direct") -> np.ndarray:
    """Full linear convolution, length ``len(a) + len(b) - 1``.

    ``method="direct"`` is the O(n*m) reference sum. ``method="fft"`` goes
    through zero-padded transforms and agrees with it to rounding error.
    """
    a = _as_sequence(a, "first operand")
    b = _as_sequence(b, "second operand")
    if method == "direct":
        return np.convolve(a, b)
    if method == "fft":
        n = a.size + b.size - 1
        return np.fft.ifft(np.fft.fft(a, n) * np.fft.fft(b, n))
    raise InvalidArgumentError(f"unknown convolution method {method!r}")


@dataclass(frozen=True)
class UserLink:
    """User ``user_id``'s channel from the transmitter and the prefilter aimed at it."""

    user_id: int
    cir: Cir
    prefilter: Prefilter

    def __post_init__(self):
        if self.prefilter.source_id != self.cir.id:
            raise InvalidArgumentError(
                f"user {self.user_id}: prefilter built from {self.prefilter.source_id!r}, "
                f"channel is {self.cir.id!r}"
            )
        if not self.prefilter.normalized:
            raise InvalidArgumentError(f"user {self.user_id}: prefilter is not normalized")
        if self.prefilter.n_taps != self.cir.n_taps:
            raise InvalidArgumentError(f"user {self.user_id}: prefilter and channel lengths differ")


@dataclass(frozen=True, eq=False)
class RxSignal:
    samples: np.ndarray
    signal_part: np.ndarray
    interference_part: np.ndarray
    noise: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.samples)
        if len(self.signal_part) != n or len(self.interference_part) != n:
            raise InvalidArgumentError("received-signal components differ in length")

    def __len__(self):
        return len(self.samples)


def receive(
    tx,
    links: Sequence[UserLink],
    target_user: int,
    noise=None,
    method: str = "direct",
) -> RxSignal:
    """Received signal at ``links[target_user]`` and its signal/interference split.

    ``tx`` must be ``compose_transmit`` of exactly the prefilters held by
    ``links``; it is checked against them. ``noise``, if given, is added to
    ``samples`` only.
    """
    if not links:
        raise InvalidArgumentError("receive needs at least one user link")
    if not (0 <= target_user < len(links)):
        raise InvalidArgumentError(f"target_user {target_user} outside [0, {len(links) - 1}]")
    tx = _as_sequence(tx, "tx")
    n = links[0].cir.n_taps
    for link in links:
        if link.cir.n_taps != n:
            raise InvalidArgumentError("user links differ in tap count")
    if tx.size != n:
        raise InvalidArgumentError(f"tx has {tx.size} taps, links have {n}")

    scale = composite_norm([link.prefilter for link in links])
    expected = np.sum([link.prefilter.taps for link in links], axis=0) / scale
    if not np.allclose(tx, expected, rtol=1e-9, atol=1e-12):
        raise InvalidArgumentError("tx is not the composite of the given links' prefilters")

    h = links[target_user].cir.taps
    signal = convolve(links[target_user].prefilter.taps / scale, h, method)
    interference = np.zeros_like(signal)
    for k, link in enumerate(links):
        if k != target_user:
            interference = interference + convolve(link.prefilter.taps / scale, h, method)
    samples = signal + interference
    if noise is not None:
        noise = np.asarray(noise, dtype=np.complex128).reshape(-1)
        if noise.size != samples.size:
            raise InvalidArgumentError(f"noise has {noise.size} samples, expected {samples.size}")
        samples = samples + noise
    return RxSignal(samples=samples, signal_part=signal, interference_part=interference, noise=noise)


def contributions_at(prefilter_taps: np.ndarray, channel_taps: np.ndarray, indices: Sequence[int]) -> np.ndarray:
    """Exact convolution samples for many (prefilter, channel) pairs at one index per channel.

    Returns ``Y`` with ``Y[k, j] = conv(prefilter_taps[k], channel_taps[j])[indices[j]]``,
    computed as direct sums, so disjoint supports give exact zeros. This is
    the per-decision-instant evaluation used by the Monte-Carlo runner; it
    matches reading :func:`receive` output at the same indices.
    """
    p = np.asarray(prefilter_taps, dtype=np.complex128)
    h = np.asarray(channel_taps, dtype=np.complex128)
    if p.ndim != 2 or h.ndim != 2 or p.shape[1] != h.shape[1]:
        raise InvalidArgumentError("expected (users, N) arrays of equal width")
    n_users, n = h.shape
    if len(indices) != n_users:
        raise InvalidArgumentError("need one index per channel")
    m = np.arange(n)
    window = np.zeros_like(h)
    for j, t in enumerate(indices):
        idx = int(t) - m
        ok = (idx >= 0) & (idx < n)
        window[j, ok] = h[j, idx[ok]]
    # einsum keeps the summation order fixed regardless of BLAS threading
    return np.einsum("km,jm->kj", p, window)

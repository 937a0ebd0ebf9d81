"""Multiuser time-reversal (TR) and circular-shift TR (CSTR) precoding simulator."""

from .channel import (
    ChannelEnsemble,
    Cir,
    FreqResponse,
    cir_from_freq_response,
    generate_synthetic_cir,
    load_cir_file,
    load_freq_response_file,
    save_cir_file,
    save_freq_response_file,
    synthetic_ensemble,
)
from .errors import ConfigError, CstrError, DegenerateChannelError, FormatError, InvalidArgumentError
from .metrics import PeakReport, SirReport, compute_sir, empirical_cdf, locate_peaks, signal_image_split
from .precoder import (
    Direction,
    Prefilter,
    ShiftSpec,
    build_prefilter,
    circular_shift,
    compose_transmit,
    normalize_equal_power,
    percent_to_taps,
    time_reverse,
)
from .propagation import RxSignal, UserLink, convolve, receive
from .scenario import ExperimentResult, ShiftSchedule, run_multiuser_sir, run_peak_vs_shift

__version__ = "0.1.0"

"""Pre-emphasis filtering and the evaluation metrics (ESR, LDR).

The pre-emphasis filter (1 - z^-1) / (1 - 0.995 z^-1) de-weights low
frequencies before loss computation and ESR evaluation. LDR measures
microdynamics as the RMS of the dB ratio between short- and long-term
energy envelopes; the envelopes are exponential moving averages of the
squared signal (coefficient exp(-1/(rate*window))) and the first long
window is skipped while they settle.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import scan
from .compressor import LEVEL_FLOOR
from .io_wav import AudioBuffer

PRE_EMPHASIS_POLE = 0.995


def _samples(x):
    return x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)


def preemphasis_array(x):
    """y[n] = x[n] - x[n-1] + 0.995 * y[n-1], zero initial state."""
    x = np.asarray(x, dtype=np.float64)
    d = np.empty_like(x)
    d[0] = x[0]
    d[1:] = x[1:] - x[:-1]
    pole = np.full(x.shape[0], PRE_EMPHASIS_POLE)
    return scan.linrec(pole, d, 0.0)


def preemphasis_adjoint(v):
    """Transpose of the pre-emphasis operator: flip, filter, flip."""
    v = np.asarray(v, dtype=np.float64)
    return preemphasis_array(v[::-1])[::-1].copy()


def preemphasis(x):
    """Pre-emphasis for AudioBuffers."""
    return AudioBuffer(preemphasis_array(x.samples), x.sample_rate)


def esr(y, y_hat):
    """Error-to-signal ratio: squared error energy over reference energy."""
    ys = _samples(y)
    es = _samples(y_hat)
    if ys.shape != es.shape:
        raise ValueError(f"length mismatch: {ys.shape} vs {es.shape}")
    energy = float(np.dot(ys, ys))
    if energy <= 0.0:
        raise ValueError("reference signal has zero energy")
    diff = ys - es
    return float(np.dot(diff, diff)) / energy


@dataclass(frozen=True)
class LdrOptions:
    """Envelope windows in seconds for the loudness dynamic range."""

    short_window: float = 0.05
    long_window: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.short_window < self.long_window:
            raise ValueError("need 0 < short_window < long_window")


def _ema(sq, coeff):
    """Bias-corrected exponential moving average of the squared signal.

    The raw EMA from zero state underestimates early energy by a factor
    (1 - a^(n+1)); dividing it out makes the envelope an exact weighted
    average of the observed samples, so stationary signals read flat from
    the first sample instead of settling over several time constants.
    """
    a = np.full(sq.shape[0], coeff)
    e = scan.linrec(a, (1.0 - coeff) * sq, 0.0)
    debias = 1.0 - np.power(coeff, np.arange(1, sq.shape[0] + 1, dtype=np.float64))
    return e / debias


def ldr(y, opts=None, sample_rate=None):
    """Loudness dynamic range in dB.

    RMS of L[n] = 10*log10(RMS_short[n] / RMS_long[n]) over the signal,
    skipped for the first long_window seconds while the envelope averages
    cover too few samples to be meaningful.
    """
    opts = opts or LdrOptions()
    if isinstance(y, AudioBuffer):
        sr = y.sample_rate
        x = y.samples
    else:
        if sample_rate is None:
            raise ValueError("sample_rate required for raw arrays")
        sr = sample_rate
        x = np.asarray(y, dtype=np.float64)
    sq = x * x
    floor = LEVEL_FLOOR * LEVEL_FLOOR
    e_short = np.maximum(_ema(sq, math.exp(-1.0 / (sr * opts.short_window))), floor)
    e_long = np.maximum(_ema(sq, math.exp(-1.0 / (sr * opts.long_window))), floor)
    l_db = 5.0 * np.log10(e_short / e_long)
    skip = min(int(round(opts.long_window * sr)), l_db.shape[0] - 1)
    tail = l_db[skip:]
    return float(np.sqrt(np.mean(tail * tail)))


def delta_ldr(y, y_hat, opts=None, sample_rate=None):
    """LDR(y_hat) - LDR(y): positive when the estimate is less compressed."""
    opts = opts or LdrOptions()
    return ldr(y_hat, opts, sample_rate) - ldr(y, opts, sample_rate)

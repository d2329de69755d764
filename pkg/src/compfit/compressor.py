"""Five-parameter feed-forward compressor forward pass.

Signal flow: hard-knee gain computer (threshold ct_db, ratio) on the
instantaneous level in dB, attack/release ballistics smoothing of the
raw gain, then the smoothed gain and make-up gain applied to the input.
The ballistics recursion is kept in the rewritten one-pole form

    g[n] = gtilde[n] + beta[n] * g[n-1]

with beta[n] selecting the attack or release coefficient per sample, and
the full per-sample trace is retained for differentiation.
"""
import math
from dataclasses import dataclass

import numpy as np

from .backend import get_backend
from .io_wav import AudioBuffer

# 20*log10(x) = LOG_DB * ln(x); gains are 10^(dB/20) = exp(dB * DB_LN).
DB_LN = math.log(10.0) / 20.0
# Level floor inside the log (~ -140 dBFS): keeps levels and gradients finite.
LEVEL_FLOOR = 1e-7
# Ballistics time-constant scale: alpha = 1 - exp(-2200 / (sr * t_ms)).
BALLISTICS_CONST = 2200.0


def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sigmoid_d1(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def sigmoid_d2(x):
    s = sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def logit(p):
    return math.log(p / (1.0 - p))


def alpha_from_time_ms(t_ms, sample_rate):
    """Smoothing coefficient for a time constant in ms at a sample rate."""
    return 1.0 - math.exp(-BALLISTICS_CONST / (sample_rate * t_ms))


def time_ms_from_alpha(alpha, sample_rate):
    return -BALLISTICS_CONST / (sample_rate * math.log1p(-alpha))


@dataclass(frozen=True)
class ParamBounds:
    """Box constraints for the bounded parameters (times in ms)."""

    ratio: tuple = (1.0, 20.0)
    attack_ms: tuple = (0.1, 100.0)
    release_ms: tuple = (10.0, 1000.0)

    def __post_init__(self):
        for name in ("ratio", "attack_ms", "release_ms"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} bounds must satisfy lo < hi, got {lo}, {hi}")
        if self.ratio[0] < 1.0:
            raise ValueError("ratio lower bound must be >= 1")
        if self.attack_ms[0] <= 0 or self.release_ms[0] <= 0:
            raise ValueError("time bounds must be positive")

    def alpha_at_bounds(self, sample_rate):
        """Attack coefficient range; alpha decreases with the time constant."""
        lo, hi = self.attack_ms
        return alpha_from_time_ms(hi, sample_rate), alpha_from_time_ms(lo, sample_rate)

    def alpha_rt_bounds(self, sample_rate):
        lo, hi = self.release_ms
        return alpha_from_time_ms(hi, sample_rate), alpha_from_time_ms(lo, sample_rate)


@dataclass
class ThetaRaw:
    """Unconstrained optimiser variables, ordered
    (ct_db, makeup_db, ratio_raw, alpha_at_raw, alpha_rt_raw)."""

    ct_db: float
    makeup_db: float
    ratio_raw: float
    alpha_at_raw: float
    alpha_rt_raw: float

    def __post_init__(self):
        if not all(map(math.isfinite, self.as_array())):
            raise ValueError("ThetaRaw components must be finite")

    def as_array(self):
        return np.array(
            [self.ct_db, self.makeup_db, self.ratio_raw, self.alpha_at_raw, self.alpha_rt_raw]
        )

    @classmethod
    def from_array(cls, v):
        return cls(*(float(c) for c in v))


@dataclass
class CompressorParams:
    """Constrained, human-readable parameters at a given sample rate."""

    ct_db: float
    ratio: float
    attack_ms: float
    release_ms: float
    makeup_db: float
    alpha_at: float
    alpha_rt: float
    sample_rate: int


@dataclass
class ForwardTrace:
    """Per-sample intermediates kept for the differentiation passes."""

    zeta: np.ndarray      # attack-phase indicator, 1 when ghat[n] < g[n-1]
    beta: np.ndarray      # recursion multiplier, 1 - alpha_phase
    g_hat: np.ndarray     # raw gain from the gain computer
    g_tilde: np.ndarray   # filter input, (1 - beta) * ghat
    g: np.ndarray         # smoothed gain
    g_init: float
    level_db: np.ndarray = None  # filled by compress(); ballistics alone has no level


def _bounded(raw, lo, hi):
    return lo + (hi - lo) * sigmoid(raw)


def constrain(theta, bounds, sample_rate):
    """Map raw optimiser variables to bounded compressor parameters.

    ratio and both smoothing coefficients go through lo + (hi-lo)*sigmoid;
    the coefficient bounds come from the time bounds at this sample rate.
    Threshold and make-up pass through unchanged.
    """
    r_lo, r_hi = bounds.ratio
    a_lo, a_hi = bounds.alpha_at_bounds(sample_rate)
    q_lo, q_hi = bounds.alpha_rt_bounds(sample_rate)
    ratio = _bounded(theta.ratio_raw, r_lo, r_hi)
    alpha_at = _bounded(theta.alpha_at_raw, a_lo, a_hi)
    alpha_rt = _bounded(theta.alpha_rt_raw, q_lo, q_hi)
    return CompressorParams(
        ct_db=theta.ct_db,
        ratio=ratio,
        attack_ms=time_ms_from_alpha(alpha_at, sample_rate),
        release_ms=time_ms_from_alpha(alpha_rt, sample_rate),
        makeup_db=theta.makeup_db,
        alpha_at=alpha_at,
        alpha_rt=alpha_rt,
        sample_rate=sample_rate,
    )


def unconstrain(params, bounds):
    """Invert constrain(); bounded values must lie strictly inside bounds."""

    def inv(value, lo, hi, name):
        t = (value - lo) / (hi - lo)
        if not 0.0 < t < 1.0:
            raise ValueError(f"{name}={value} is at or outside bounds ({lo}, {hi})")
        return logit(t)

    sr = params.sample_rate
    a_lo, a_hi = bounds.alpha_at_bounds(sr)
    q_lo, q_hi = bounds.alpha_rt_bounds(sr)
    return ThetaRaw(
        ct_db=params.ct_db,
        makeup_db=params.makeup_db,
        ratio_raw=inv(params.ratio, *bounds.ratio, "ratio"),
        alpha_at_raw=inv(params.alpha_at, a_lo, a_hi, "alpha_at"),
        alpha_rt_raw=inv(params.alpha_rt, q_lo, q_hi, "alpha_rt"),
    )


def params_from_times(ct_db, ratio, attack_ms, release_ms, makeup_db, sample_rate):
    """Build CompressorParams from time constants in ms."""
    return CompressorParams(
        ct_db=ct_db,
        ratio=ratio,
        attack_ms=attack_ms,
        release_ms=release_ms,
        makeup_db=makeup_db,
        alpha_at=alpha_from_time_ms(attack_ms, sample_rate),
        alpha_rt=alpha_from_time_ms(release_ms, sample_rate),
        sample_rate=sample_rate,
    )


def default_init_params(sample_rate):
    """Starting point for fits: -36 dB threshold, unity make-up, 4:1,
    1 ms attack, 200 ms release."""
    return params_from_times(-36.0, 4.0, 1.0, 200.0, 0.0, sample_rate)


def level_db(x):
    """Instantaneous level 20*log10(max(|x|, floor)) per sample."""
    samples = x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)
    return 20.0 * np.log10(np.maximum(np.abs(samples), LEVEL_FLOOR))


def gain_from_level(level, ct_db, ratio):
    """Hard-knee law: returns (ghat, q) with q the pre-clamp dB reduction
    q = (1 - 1/ratio) * (ct_db - level) and ghat = 10^(min(0, q)/20)."""
    q = (1.0 - 1.0 / ratio) * (ct_db - level)
    ghat = np.exp(DB_LN * np.minimum(0.0, q))
    return ghat, q


def gain_computer(x, ct_db, ratio):
    """Raw per-sample gain in (0, 1] before ballistics smoothing."""
    if ratio < 1.0:
        raise ValueError("ratio must be >= 1")
    ghat, _ = gain_from_level(level_db(x), ct_db, ratio)
    return ghat


def ballistics(g_hat, alpha_at, alpha_rt, g_init=1.0):
    """Smooth the raw gain with the attack/release one-pole recursion.

    Attack branch when g_hat[n] < g[n-1]; equality takes the release
    branch. Returns the full ForwardTrace (level_db unset).
    """
    if not (0.0 < alpha_at < 1.0 and 0.0 < alpha_rt < 1.0):
        raise ValueError("smoothing coefficients must lie in (0, 1)")
    if not 0.0 < g_init <= 1.0:
        raise ValueError("g_init must lie in (0, 1]")
    g_hat = np.ascontiguousarray(g_hat, dtype=np.float64)
    zeta, beta, g_tilde, g = get_backend().ballistics_fwd(
        g_hat, float(alpha_at), float(alpha_rt), float(g_init)
    )
    return ForwardTrace(zeta=zeta, beta=beta, g_hat=g_hat, g_tilde=g_tilde, g=g, g_init=g_init)


def compress(x, theta, bounds=None, g_init=1.0):
    """Run the full compressor; returns (output AudioBuffer, ForwardTrace)."""
    bounds = bounds if bounds is not None else ParamBounds()
    params = constrain(theta, bounds, x.sample_rate)
    lvl = level_db(x)
    ghat, _ = gain_from_level(lvl, params.ct_db, params.ratio)
    trace = ballistics(ghat, params.alpha_at, params.alpha_rt, g_init)
    trace.level_db = lvl
    makeup = math.exp(DB_LN * params.makeup_db)
    y = x.samples * trace.g * makeup
    return AudioBuffer(y, x.sample_rate), trace


def compress_params(x, params, g_init=1.0):
    """compress() variant taking constrained CompressorParams directly."""
    lvl = level_db(x)
    ghat, _ = gain_from_level(lvl, params.ct_db, params.ratio)
    trace = ballistics(ghat, params.alpha_at, params.alpha_rt, g_init)
    trace.level_db = lvl
    makeup = math.exp(DB_LN * params.makeup_db)
    y = x.samples * trace.g * makeup
    return AudioBuffer(y, x.sample_rate), trace

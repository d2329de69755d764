"""Synthetic paired-corpus generation.

Produces model-generated ground truth: for each label a stimulus x and
y = compress(x, theta*(label)) with the exact parameters recorded in a
manifest, fully deterministic under the seed. Stimuli include level
steps crossing the threshold in both directions so attack and release
phases are both excited; without that, one of the smoothing
coefficients is unidentifiable and the Hessian goes singular.
"""
import math
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import textfmt
from .compressor import params_from_times
from .io_wav import AudioBuffer, save_wav
from .metrics import LdrOptions


class Stimulus(Enum):
    NoiseBursts = "noise-bursts"
    AmTone = "am-tone"
    StepEnvelope = "step-envelope"
    Mixed = "mixed"


# Linear interpolation spaces for theta*(label) curves: times move in
# log-ms (they vary exponentially with device settings), levels in dB.
_PARAM_KEYS = ("ct_db", "ratio", "attack_ms", "release_ms", "makeup_db")
_LOG_PARAMS = {"attack_ms", "release_ms"}


@dataclass
class CorpusSpec:
    seed: int
    duration: float
    sample_rate: int
    labels: list
    theta_curve: dict  # param name -> [(label, value), ...]
    stimulus: Stimulus = Stimulus.NoiseBursts
    mode: str = "compressor"

    def __post_init__(self):
        min_dur = 2.0 * LdrOptions().long_window
        if self.duration < min_dur:
            raise ValueError(f"duration must be >= {min_dur} s (two long LDR windows)")
        if list(self.labels) != sorted(self.labels):
            raise ValueError("labels must be sorted")
        for key in _PARAM_KEYS:
            if key not in self.theta_curve or not self.theta_curve[key]:
                raise ValueError(f"theta_curve missing knots for {key}")


def theta_star(spec, label):
    """Exact ground-truth parameters at a label (piecewise-linear curve)."""
    vals = {}
    for key in _PARAM_KEYS:
        knots = sorted(spec.theta_curve[key])
        xs = [k[0] for k in knots]
        ys = [k[1] for k in knots]
        if key in _LOG_PARAMS:
            ys = [math.log(v) for v in ys]
        v = float(np.interp(label, xs, ys))
        vals[key] = math.exp(v) if key in _LOG_PARAMS else v
    return params_from_times(sample_rate=spec.sample_rate, **vals)


def _noise_bursts(rng, n, sr):
    x = np.zeros(n)
    pos = 0
    loud = False
    while pos < n:
        seg = int(sr * rng.uniform(0.25, 0.6))
        level_db = rng.uniform(-14.0, -6.0) if loud else rng.uniform(-50.0, -38.0)
        amp = 10.0 ** (level_db / 20.0)
        end = min(pos + seg, n)
        x[pos:end] = rng.standard_normal(end - pos) * amp
        pos = end
        loud = not loud
    return x


def _am_tone(rng, n, sr):
    t = np.arange(n) / sr
    carrier = np.sin(2.0 * np.pi * rng.uniform(180.0, 300.0) * t)
    lfo = 0.5 * (1.0 + np.sin(2.0 * np.pi * rng.uniform(0.8, 2.5) * t))
    lo, hi = 10.0 ** (-38.0 / 20.0), 10.0 ** (-8.0 / 20.0)
    return carrier * (lo + (hi - lo) * lfo)


def _step_envelope(rng, n, sr):
    x = rng.standard_normal(n)
    env = np.empty(n)
    pos = 0
    levels_db = [-45.0, -10.0, -30.0, -6.0, -40.0, -14.0]
    i = 0
    while pos < n:
        seg = int(sr * rng.uniform(0.35, 0.7))
        end = min(pos + seg, n)
        env[pos:end] = 10.0 ** (levels_db[i % len(levels_db)] / 20.0)
        pos = end
        i += 1
    return x * env


def make_stimulus(spec, rng=None):
    """Deterministic stimulus for a CorpusSpec (fresh RNG from the seed)."""
    rng = rng or np.random.default_rng(spec.seed)
    n = int(round(spec.duration * spec.sample_rate))
    sr = spec.sample_rate
    kind = spec.stimulus
    if kind is Stimulus.NoiseBursts:
        x = _noise_bursts(rng, n, sr)
    elif kind is Stimulus.AmTone:
        x = _am_tone(rng, n, sr)
    elif kind is Stimulus.StepEnvelope:
        x = _step_envelope(rng, n, sr)
    else:  # Mixed: thirds of each
        third = n // 3
        x = np.concatenate([
            _noise_bursts(rng, third, sr),
            _am_tone(rng, third, sr),
            _step_envelope(rng, n - 2 * third, sr),
        ])
    return AudioBuffer(np.clip(x, -1.0, 1.0), sr)


MANIFEST_MAGIC = "compfit-corpus v1"
_HEADER_KEYS = {
    "sample_rate": int,
    "seed": int,
    "duration": float,
    "stimulus": str,
    "mode": str,
}
# theta* fields are generator metadata; user-written manifests for real
# corpora carry only label/mode/paths.
_ENTRY_KEYS = {
    "label": float,
    "mode": str,
    "x": str,
    "y": str,
    "ct_db": textfmt.optional(float),
    "ratio": textfmt.optional(float),
    "attack_ms": textfmt.optional(float),
    "release_ms": textfmt.optional(float),
    "makeup_db": textfmt.optional(float),
}


def generate(spec, out_dir, threads=None):
    """Write x/y WAV pairs plus a manifest; returns the manifest path.

    Labels are independent and render in parallel; outputs stay
    byte-identical across runs and thread counts because each label
    derives its own RNG stream from (seed, label index). Manifest entries
    are written heaviest-compression-first (descending label) so a fit
    chain over the manifest follows the warm-start protocol directly.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .compressor import compress_params

    os.makedirs(out_dir, exist_ok=True)

    def render_label(item):
        idx, label = item
        rng = np.random.default_rng([spec.seed, idx])
        x = make_stimulus(spec, rng)
        params = theta_star(spec, label)
        y, _ = compress_params(x, params)
        xname = f"x_{label:g}.wav"
        yname = f"y_{label:g}.wav"
        save_wav(os.path.join(out_dir, xname), x, "float32")
        save_wav(os.path.join(out_dir, yname), y, "float32")
        return {
            "label": float(label),
            "mode": spec.mode,
            "x": xname,
            "y": yname,
            "ct_db": params.ct_db,
            "ratio": params.ratio,
            "attack_ms": params.attack_ms,
            "release_ms": params.release_ms,
            "makeup_db": params.makeup_db,
        }

    items = list(enumerate(spec.labels))
    if len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            entries = list(ex.map(render_label, items))
    else:
        entries = [render_label(items[0])]
    entries.reverse()
    manifest = os.path.join(out_dir, "manifest.txt")
    textfmt.dump_blocks(manifest, MANIFEST_MAGIC, {
        "sample_rate": spec.sample_rate,
        "seed": spec.seed,
        "duration": spec.duration,
        "stimulus": spec.stimulus.value,
        "mode": spec.mode,
    }, entries)
    return manifest


def load_manifest(path):
    """Read a corpus manifest; returns (header dict, entries list)."""
    header, entries = textfmt.load_blocks(path, MANIFEST_MAGIC, _HEADER_KEYS, _ENTRY_KEYS)
    return header, entries


def manifest_theta(entry, sample_rate):
    """Exact generator parameters recorded for a manifest entry, or None
    for user-written manifests without ground truth."""
    if "ct_db" not in entry:
        return None
    return params_from_times(
        entry["ct_db"], entry["ratio"], entry["attack_ms"],
        entry["release_ms"], entry["makeup_db"], sample_rate,
    )

"""Fitted-parameter tables: storage, interpolation, leave-out evaluation.

A ParameterMap holds one row per (mode, device-setting label). Between
stored labels the five parameters interpolate independently, each in the
space where learnt curves are smooth: threshold/make-up in dB as-is,
attack/release in log-ms (they vary exponentially with the setting),
ratio linearly. Cubic splines use natural boundary conditions. No
extrapolation outside the stored label range.
"""
import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import textfmt
from .compressor import CompressorParams, ParamBounds, params_from_times
from .metrics import esr, preemphasis


class InterpMethod(Enum):
    Linear = "linear"
    CubicSpline = "cubic-spline"


@dataclass
class MapEntry:
    label: float
    mode: str
    params: CompressorParams
    fit_loss: float = float("nan")
    fit_esr: float = float("nan")


@dataclass
class ParameterMap:
    sample_rate: int
    bounds: ParamBounds = field(default_factory=ParamBounds)
    entries: list = field(default_factory=list)
    interp: InterpMethod = InterpMethod.Linear

    def add(self, entry):
        if any(e.mode == entry.mode and e.label == entry.label for e in self.entries):
            raise ValueError(f"duplicate label {entry.label} for mode {entry.mode!r}")
        self._check_bounds(entry.params)
        self.entries.append(entry)
        self.entries.sort(key=lambda e: (e.mode, e.label))

    def _check_bounds(self, p):
        lo, hi = self.bounds.ratio
        checks = [("ratio", p.ratio, lo, hi),
                  ("attack_ms", p.attack_ms, *self.bounds.attack_ms),
                  ("release_ms", p.release_ms, *self.bounds.release_ms)]
        for name, v, b_lo, b_hi in checks:
            if not b_lo <= v <= b_hi:
                raise ValueError(f"{name}={v} outside bounds [{b_lo}, {b_hi}]")

    def mode_entries(self, mode):
        sel = [e for e in self.entries if e.mode == mode]
        if not sel:
            raise ValueError(f"unknown mode {mode!r}")
        return sel

    def without(self, mode, labels):
        """Copy with the given labels of one mode removed (leave-out)."""
        drop = set(labels)
        keep = [e for e in self.entries if not (e.mode == mode and e.label in drop)]
        return ParameterMap(self.sample_rate, self.bounds, keep, self.interp)


def natural_cubic_second_derivs(xs, ys):
    """Second derivatives of the natural cubic spline through (xs, ys)."""
    n = len(xs)
    m = np.zeros(n)
    if n < 3:
        return m
    h = np.diff(xs)
    # Tridiagonal system for interior second derivatives (Thomas solve).
    sub = h[:-1].copy()
    diag = 2.0 * (h[:-1] + h[1:])
    sup = h[1:].copy()
    rhs = 6.0 * (np.diff(ys[1:]) / h[1:] - np.diff(ys[:-1]) / h[:-1])
    for i in range(1, n - 2):
        w = sub[i] / diag[i - 1]
        diag[i] -= w * sup[i - 1]
        rhs[i] -= w * rhs[i - 1]
    sol = np.zeros(n - 2)
    sol[-1] = rhs[-1] / diag[-1]
    for i in range(n - 4, -1, -1):
        sol[i] = (rhs[i] - sup[i] * sol[i + 1]) / diag[i]
    m[1:-1] = sol
    return m


def cubic_spline_eval(xs, ys, m, x):
    """Evaluate the cubic spline with knot second derivatives m at x."""
    j = int(np.clip(np.searchsorted(xs, x) - 1, 0, len(xs) - 2))
    h = xs[j + 1] - xs[j]
    a = (xs[j + 1] - x) / h
    b = (x - xs[j]) / h
    return (
        a * ys[j]
        + b * ys[j + 1]
        + ((a**3 - a) * m[j] + (b**3 - b) * m[j + 1]) * h * h / 6.0
    )


# Interpolation space per parameter: (to_space, from_space).
_SPACES = {
    "ct_db": (lambda v: v, lambda v: v),
    "ratio": (lambda v: v, lambda v: v),
    "attack_ms": (math.log, math.exp),
    "release_ms": (math.log, math.exp),
    "makeup_db": (lambda v: v, lambda v: v),
}


def interpolate(pmap, mode, label, method=None):
    """Parameters at an arbitrary label within the stored range."""
    method = InterpMethod(method) if method is not None else pmap.interp
    entries = pmap.mode_entries(mode)
    if len(entries) < 2:
        raise ValueError(f"mode {mode!r} needs >= 2 entries to interpolate")
    labels = np.array([e.label for e in entries])
    if not labels[0] <= label <= labels[-1]:
        raise ValueError(
            f"label {label} outside stored range [{labels[0]}, {labels[-1]}] (no extrapolation)"
        )
    vals = {}
    for key, (fwd, inv) in _SPACES.items():
        ys = np.array([fwd(getattr(e.params, key)) for e in entries])
        if method is InterpMethod.Linear:
            v = float(np.interp(label, labels, ys))
        else:
            m = natural_cubic_second_derivs(labels, ys)
            v = float(cubic_spline_eval(labels, ys, m, label))
        vals[key] = inv(v)
    return params_from_times(sample_rate=pmap.sample_rate, **vals)


def render(pmap, mode, label, x, method=None):
    """Process audio through the compressor at an interpolated setting.

    The audio must be at the map's sample rate: the stored smoothing
    coefficients are only meaningful there.
    """
    from .compressor import compress_params

    if x.sample_rate != pmap.sample_rate:
        raise ValueError(
            f"rate mismatch: map at {pmap.sample_rate} Hz, audio at {x.sample_rate} Hz"
        )
    params = interpolate(pmap, mode, label, method)
    y, _ = compress_params(x, params)
    return y


def interp_eval(pmap, mode, held_out, pairs, methods=(InterpMethod.Linear, InterpMethod.CubicSpline),
                preemph=True):
    """Leave-out interpolation protocol.

    For each held-out label: remove it from the map, interpolate the
    remaining knots, render the dry signal, and score ESR against the
    ground truth (both pre-emphasised). Returns (rows, averages) where
    rows are dicts {label, method, esr} and averages map method -> mean.
    """
    held_out = sorted(held_out)
    reduced = pmap.without(mode, held_out)
    rows = []
    for label in held_out:
        if label not in pairs:
            raise ValueError(f"no ground-truth pair supplied for held-out label {label}")
        x, y_true = pairs[label]
        ref = preemphasis(y_true) if preemph else y_true
        for method in methods:
            y_hat = render(reduced, mode, label, x, method)
            est = preemphasis(y_hat) if preemph else y_hat
            rows.append({"label": label, "method": InterpMethod(method), "esr": esr(ref, est)})
    averages = {}
    for m in methods:
        vals = [r["esr"] for r in rows if r["method"] is InterpMethod(m)]
        averages[m] = float(np.mean(vals)) if vals else float("nan")
    return rows, averages


# ---------------------------------------------------------------------------
# Serialisation.
# ---------------------------------------------------------------------------

MAP_MAGIC = "compfit-map v1"
_HEADER_KEYS = {
    "sample_rate": int,
    "interp": str,
    "ratio_lo": float,
    "ratio_hi": float,
    "attack_ms_lo": float,
    "attack_ms_hi": float,
    "release_ms_lo": float,
    "release_ms_hi": float,
}
_ENTRY_KEYS = {
    "label": float,
    "mode": str,
    "ct_db": float,
    "ratio": float,
    "attack_ms": float,
    "release_ms": float,
    "makeup_db": float,
    "fit_loss": textfmt.optional(float),
    "fit_esr": textfmt.optional(float),
}

CSV_COLUMNS = ["label", "mode", "ct_db", "ratio", "attack_ms", "release_ms",
               "makeup_db", "fit_loss", "fit_esr"]


def save_map(pmap, path):
    header = {
        "sample_rate": pmap.sample_rate,
        "interp": pmap.interp.value,
        "ratio_lo": pmap.bounds.ratio[0],
        "ratio_hi": pmap.bounds.ratio[1],
        "attack_ms_lo": pmap.bounds.attack_ms[0],
        "attack_ms_hi": pmap.bounds.attack_ms[1],
        "release_ms_lo": pmap.bounds.release_ms[0],
        "release_ms_hi": pmap.bounds.release_ms[1],
    }
    entries = []
    for e in pmap.entries:
        row = {
            "label": e.label,
            "mode": e.mode,
            "ct_db": e.params.ct_db,
            "ratio": e.params.ratio,
            "attack_ms": e.params.attack_ms,
            "release_ms": e.params.release_ms,
            "makeup_db": e.params.makeup_db,
        }
        if not math.isnan(e.fit_loss):
            row["fit_loss"] = e.fit_loss
        if not math.isnan(e.fit_esr):
            row["fit_esr"] = e.fit_esr
        entries.append(row)
    textfmt.dump_blocks(path, MAP_MAGIC, header, entries)


def load_map(path):
    header, raw_entries = textfmt.load_blocks(path, MAP_MAGIC, _HEADER_KEYS, _ENTRY_KEYS)
    bounds = ParamBounds(
        ratio=(header["ratio_lo"], header["ratio_hi"]),
        attack_ms=(header["attack_ms_lo"], header["attack_ms_hi"]),
        release_ms=(header["release_ms_lo"], header["release_ms_hi"]),
    )
    pmap = ParameterMap(header["sample_rate"], bounds, [], InterpMethod(header["interp"]))
    for e in raw_entries:
        params = params_from_times(
            e["ct_db"], e["ratio"], e["attack_ms"], e["release_ms"],
            e["makeup_db"], header["sample_rate"],
        )
        pmap.add(MapEntry(e["label"], e["mode"], params,
                          e.get("fit_loss", float("nan")), e.get("fit_esr", float("nan"))))
    return pmap


def export_csv(pmap, path):
    """Flat CSV of the map (the device-setting -> parameters table)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for e in pmap.entries:
            w.writerow([
                f"{e.label:g}", e.mode,
                textfmt.fmt_float(e.params.ct_db), textfmt.fmt_float(e.params.ratio),
                textfmt.fmt_float(e.params.attack_ms), textfmt.fmt_float(e.params.release_ms),
                textfmt.fmt_float(e.params.makeup_db),
                textfmt.fmt_float(e.fit_loss), textfmt.fmt_float(e.fit_esr),
            ])

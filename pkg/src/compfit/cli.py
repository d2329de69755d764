"""compfit command line: fit, evaluate, render and benchmark.

Output contract: machine-readable key=value lines on stdout, diagnostics
on stderr. Exit 0 on success, 1 on runtime failure, 2 on usage errors.
Tables for plotting land in CSV files.
"""
import csv
import os
import statistics
import sys
import time
import tracemalloc

import click
import numpy as np

from . import backend as backend_mod
from . import scan, synth, textfmt
from .autodiff import HessianStrategy, MatchProblem, gradient_check_battery
from .compressor import ParamBounds, ThetaRaw, params_from_times, unconstrain
from .io_wav import AudioBuffer, load_wav, pair_validate, save_wav
from .metrics import LdrOptions, esr, ldr, preemphasis
from .optimizer import NROptions, fit_chain, fit_problem
from .param_map import (
    InterpMethod,
    MapEntry,
    ParameterMap,
    export_csv,
    interp_eval,
    interpolate,
    load_map,
    render,
    save_map,
)

STRATEGIES = {s.value: s for s in HessianStrategy}


def emit(**kv):
    for k, v in kv.items():
        if isinstance(v, float):
            click.echo(f"{k}={v:.12g}")
        else:
            click.echo(f"{k}={v}")


@click.group()
@click.option("--threads", type=int, default=None, help="Worker pool size (default: machine cores).")
@click.option("--backend", type=click.Choice(["auto", "cython", "python"]), default="auto",
              help="Kernel backend (default: compiled when available).")
def main(threads, backend):
    """Sound matching for a five-parameter feed-forward compressor."""
    if backend != "auto":
        backend_mod.set_backend(backend)
    if threads is not None:
        scan.set_workers(threads)
    main.threads = threads


def _bounds_options(fn):
    fn = click.option("--ratio-bounds", nargs=2, type=float, default=(1.0, 20.0),
                      show_default=True, help="Ratio range.")(fn)
    fn = click.option("--attack-bounds", nargs=2, type=float, default=(0.1, 100.0),
                      show_default=True, help="Attack range (ms).")(fn)
    fn = click.option("--release-bounds", nargs=2, type=float, default=(10.0, 1000.0),
                      show_default=True, help="Release range (ms).")(fn)
    return fn


def _nr_options(fn):
    fn = click.option("--armijo-alpha", type=float, default=1e-4, show_default=True)(fn)
    fn = click.option("--max-iters", type=int, default=50, show_default=True)(fn)
    fn = click.option("--grad-tol", type=float, default=1e-9, show_default=True)(fn)
    fn = click.option("--strategy", type=click.Choice(sorted(STRATEGIES)), default="rev-rev",
                      show_default=True, help="Hessian assembly strategy.")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="RNG seed (curvature escape directions).")(fn)
    return fn


def _init_options(fn):
    fn = click.option("--ct-init", type=float, default=-36.0, show_default=True)(fn)
    fn = click.option("--makeup-init", type=float, default=0.0, show_default=True)(fn)
    fn = click.option("--ratio-init", type=float, default=4.0, show_default=True)(fn)
    fn = click.option("--attack-init", type=float, default=1.0, show_default=True, help="ms")(fn)
    fn = click.option("--release-init", type=float, default=200.0, show_default=True, help="ms")(fn)
    return fn


def _chunk_options(fn):
    fn = click.option("--chunk-sec", type=float, default=12.0, show_default=True)(fn)
    fn = click.option("--overlap-sec", type=float, default=1.0, show_default=True)(fn)
    fn = click.option("--preemph/--no-preemph", default=True, show_default=True,
                      help="Pre-emphasis before the loss and ESR.")(fn)
    return fn


def _make_bounds(ratio_bounds, attack_bounds, release_bounds):
    return ParamBounds(ratio=tuple(ratio_bounds), attack_ms=tuple(attack_bounds),
                       release_ms=tuple(release_bounds))


def _make_init(bounds, sr, ct, makeup, ratio, attack, release):
    return unconstrain(params_from_times(ct, ratio, attack, release, makeup, sr), bounds)


def _fit_one(x, y, bounds, theta_init, opts, preemph, chunk_sec, overlap_sec):
    problem = MatchProblem(x, y, bounds=bounds, preemph=preemph, chunk_sec=chunk_sec,
                           overlap_sec=overlap_sec, threads=getattr(main, "threads", None))
    result = fit_problem(problem, theta_init, opts)
    yhat, _ = _render_params(x, result.params)
    fit_esr = esr(preemphasis(y), preemphasis(yhat)) if preemph else esr(y, yhat)
    return result, fit_esr


def _render_params(x, params):
    from .compressor import compress_params

    return compress_params(x, params)


@main.command("fit")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="Dry/source WAV.")
@click.option("--target", required=True, type=click.Path(exists=True), help="Processed WAV.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Parameter map to write.")
@click.option("--label", type=float, default=0.0, show_default=True)
@click.option("--mode", default="compressor", show_default=True)
@_chunk_options
@_init_options
@_bounds_options
@_nr_options
def fit_cmd(input_path, target, out_path, label, mode, chunk_sec, overlap_sec, preemph,
            ct_init, makeup_init, ratio_init, attack_init, release_init,
            ratio_bounds, attack_bounds, release_bounds,
            armijo_alpha, max_iters, grad_tol, strategy, seed):
    """Fit compressor parameters to one dry/processed pair."""
    x = load_wav(input_path)
    y = load_wav(target)
    pair_validate(x, y)
    bounds = _make_bounds(ratio_bounds, attack_bounds, release_bounds)
    theta0 = _make_init(bounds, x.sample_rate, ct_init, makeup_init, ratio_init,
                        attack_init, release_init)
    opts = NROptions(armijo_alpha=armijo_alpha, max_iters=max_iters, grad_tol=grad_tol,
                     rng_seed=seed, strategy=STRATEGIES[strategy])
    result, fit_esr = _fit_one(x, y, bounds, theta0, opts, preemph, chunk_sec, overlap_sec)
    p = result.params
    emit(status=result.status.value, iters=result.iters, loss=result.loss_trajectory[-1],
         grad_norm=result.grad_norm, esr=fit_esr, ct_db=p.ct_db, ratio=p.ratio,
         attack_ms=p.attack_ms, release_ms=p.release_ms, makeup_db=p.makeup_db,
         curvature_retries=result.curvature_retries)
    if out_path:
        pmap = ParameterMap(x.sample_rate, bounds)
        pmap.add(MapEntry(label, mode, p, result.loss_trajectory[-1], fit_esr))
        save_map(pmap, out_path)
        emit(map=out_path)


@main.command("fit-chain")
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="Corpus manifest (labels processed in file order).")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Parameter map to write.")
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Also export the map as CSV.")
@_chunk_options
@_init_options
@_bounds_options
@_nr_options
def fit_chain_cmd(corpus, out_path, csv_path, chunk_sec, overlap_sec, preemph,
                  ct_init, makeup_init, ratio_init, attack_init, release_init,
                  ratio_bounds, attack_bounds, release_bounds,
                  armijo_alpha, max_iters, grad_tol, strategy, seed):
    """Fit every corpus entry, warm-starting from the previous solution."""
    header, entries = synth.load_manifest(corpus)
    base = os.path.dirname(os.path.abspath(corpus))
    pairs = []
    for e in entries:
        x = load_wav(os.path.join(base, e["x"]))
        y = load_wav(os.path.join(base, e["y"]))
        pair_validate(x, y)
        if x.sample_rate != header["sample_rate"]:
            raise click.ClickException(
                f"{e['x']}: {x.sample_rate} Hz differs from manifest rate "
                f"{header['sample_rate']} Hz")
        pairs.append(((e["label"], e["mode"]), (x, y)))
    bounds = _make_bounds(ratio_bounds, attack_bounds, release_bounds)
    sr = pairs[0][1][0].sample_rate
    theta0 = _make_init(bounds, sr, ct_init, makeup_init, ratio_init, attack_init, release_init)
    opts = NROptions(armijo_alpha=armijo_alpha, max_iters=max_iters, grad_tol=grad_tol,
                     rng_seed=seed, strategy=STRATEGIES[strategy])
    results = fit_chain(pairs, theta0, bounds, opts, preemph, chunk_sec, overlap_sec,
                        threads=getattr(main, "threads", None))
    pmap = ParameterMap(sr, bounds)
    total_iters = 0
    failures = 0
    for ((label, mode), (x, y)), ((_lbl, _md), res) in zip(pairs, results):
        if isinstance(res, Exception):
            failures += 1
            click.echo(f"label={label:g} error={res}", err=True)
            continue
        yhat, _ = _render_params(x, res.params)
        fit_esr = esr(preemphasis(y), preemphasis(yhat)) if preemph else esr(y, yhat)
        pmap.add(MapEntry(label, mode, res.params, res.loss_trajectory[-1], fit_esr))
        total_iters += res.iters
        emit(label=label, mode=mode, status=res.status.value, iters=res.iters,
             loss=res.loss_trajectory[-1], esr=fit_esr)
    save_map(pmap, out_path)
    emit(map=out_path, total_iters=total_iters, failures=failures)
    if csv_path:
        export_csv(pmap, csv_path)
        emit(csv=csv_path)
    if failures:
        sys.exit(1)


@main.command("render")
@click.option("--map", "map_path", required=True, type=click.Path(exists=True))
@click.option("--mode", default="compressor", show_default=True)
@click.option("--label", type=float, required=True)
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--method", type=click.Choice([m.value for m in InterpMethod]), default=None,
              help="Override the map's interpolation method.")
def render_cmd(map_path, mode, label, input_path, out_path, method):
    """Process audio through interpolated parameters at a label."""
    pmap = load_map(map_path)
    x = load_wav(input_path)
    if x.sample_rate != pmap.sample_rate:
        raise click.ClickException(
            f"rate mismatch: map at {pmap.sample_rate} Hz, input at {x.sample_rate} Hz")
    m = InterpMethod(method) if method else None
    y = render(pmap, mode, label, x, m)
    save_wav(out_path, y, "float32")
    p = interpolate(pmap, mode, label, m)
    emit(out=out_path, ct_db=p.ct_db, ratio=p.ratio, attack_ms=p.attack_ms,
         release_ms=p.release_ms, makeup_db=p.makeup_db)


@main.command("metrics")
@click.option("--reference", required=True, type=click.Path(exists=True))
@click.option("--estimate", required=True, type=click.Path(exists=True))
@click.option("--preemph/--no-preemph", default=True, show_default=True,
              help="Pre-emphasise both signals before ESR.")
@click.option("--short-window", type=float, default=0.05, show_default=True)
@click.option("--long-window", type=float, default=3.0, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def metrics_cmd(reference, estimate, preemph, short_window, long_window, csv_path):
    """ESR, LDR of both signals and delta-LDR for a reference/estimate pair."""
    y = load_wav(reference)
    yh = load_wav(estimate)
    pair_validate(y, yh)
    opts = LdrOptions(short_window, long_window)
    e = esr(preemphasis(y), preemphasis(yh)) if preemph else esr(y, yh)
    l_ref = ldr(y, opts)
    l_est = ldr(yh, opts)
    emit(esr=e, ldr_ref=l_ref, ldr_est=l_est, delta_ldr=l_est - l_ref)
    if csv_path:
        new = not os.path.exists(csv_path)
        with open(csv_path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["reference", "estimate", "esr", "ldr_ref", "ldr_est", "delta_ldr"])
            w.writerow([reference, estimate, textfmt.fmt_float(e), textfmt.fmt_float(l_ref),
                        textfmt.fmt_float(l_est), textfmt.fmt_float(l_est - l_ref)])
        emit(csv=csv_path)


@main.command("grad-check")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--draws", type=int, default=50, show_default=True)
@click.option("--step", type=float, default=1e-6, show_default=True, help="FD step.")
@click.option("--tol", type=float, default=1e-6, show_default=True)
def grad_check_cmd(seed, samples, draws, step, tol):
    """Analytic gradient vs central finite differences on seeded noise."""
    t0 = time.perf_counter()
    max_err, _ = gradient_check_battery(draws=draws, samples=samples, seed=seed, h=step)
    elapsed = time.perf_counter() - t0
    ok = max_err < tol
    emit(draws=draws, samples=samples, max_rel_err=max_err, tol=tol,
         elapsed_s=elapsed, result="PASS" if ok else "FAIL")
    if not ok:
        sys.exit(1)


@main.command("hessian-bench")
@click.option("--strategy", type=click.Choice(sorted(STRATEGIES) + ["all"]), default="all",
              show_default=True)
@click.option("--samples", type=int, default=132300, show_default=True,
              help="Synthetic pair length (3 s at 44.1 kHz).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reps", type=int, default=3, show_default=True)
def hessian_bench_cmd(strategy, samples, seed, reps):
    """Wall time, peak allocation and cross-agreement per Hessian strategy.

    Timings and memory are local measurements on this machine; they are
    not comparable across hosts or frameworks.
    """
    from .compressor import compress

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(samples) * 0.02
    for _ in range(max(2, samples // 4000)):
        lo = int(rng.integers(0, samples - 50))
        hi = min(samples, lo + int(rng.integers(400, 4000)))
        x[lo:hi] *= rng.uniform(10.0, 40.0)
    xb = AudioBuffer(np.clip(x, -1.0, 1.0), 44100)
    theta_t = ThetaRaw.from_array(rng.normal(0.0, 0.5, 5) + np.array([-28.0, 0.0, 0, 0, 0]))
    yb, _ = compress(xb, theta_t, ParamBounds())
    theta = ThetaRaw.from_array(rng.normal(0.0, 0.5, 5) + np.array([-25.0, 0.5, 0, 0, 0]))
    prob = MatchProblem(xb, yb, preemph=True, threads=getattr(main, "threads", None))
    chosen = sorted(STRATEGIES) if strategy == "all" else [strategy]
    mats = {}
    for name in chosen:
        strat = STRATEGIES[name]
        times = []
        tracemalloc.start()
        for _ in range(reps):
            t0 = time.perf_counter()
            H = prob.hessian(theta, strat)
            times.append(time.perf_counter() - t0)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        mats[name] = H.matrix
        emit(strategy=name, time_ms=1e3 * statistics.median(times),
             peak_mem_mb=peak / 1e6, asym=H.asym)
    if len(mats) > 1:
        names = sorted(mats)
        scale = max(np.max(np.abs(mats[names[0]])), 1e-300)
        dev = max(
            float(np.max(np.abs(mats[a] - mats[b]))) / scale
            for i, a in enumerate(names) for b in names[i + 1:]
        )
        emit(cross_agreement_max=dev, result="PASS" if dev < 1e-8 else "FAIL")
        if dev >= 1e-8:
            sys.exit(1)


@main.command("interp-eval")
@click.option("--map", "map_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="Manifest providing ground-truth pairs for held-out labels.")
@click.option("--mode", default="compressor", show_default=True)
@click.option("--hold-out", default="alternate", show_default=True,
              help="Comma-separated labels, or 'alternate' for every other stored label.")
@click.option("--preemph/--no-preemph", default=True, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
def interp_eval_cmd(map_path, corpus, mode, hold_out, preemph, csv_path):
    """Leave-out interpolation evaluation over a fitted map."""
    pmap = load_map(map_path)
    header, entries = synth.load_manifest(corpus)
    base = os.path.dirname(os.path.abspath(corpus))
    pairs = {}
    for e in entries:
        if e["mode"] != mode:
            continue
        pairs[e["label"]] = (load_wav(os.path.join(base, e["x"])),
                             load_wav(os.path.join(base, e["y"])))
    stored = [e.label for e in pmap.mode_entries(mode)]
    if hold_out == "alternate":
        held = stored[1:-1:2]
    else:
        held = [float(v) for v in hold_out.split(",") if v.strip()]
    rows, averages = interp_eval(pmap, mode, held, pairs, preemph=preemph)
    for r in rows:
        emit(label=r["label"], method=r["method"].value, esr=r["esr"])
    for method, avg in averages.items():
        emit(method=InterpMethod(method).value, avg_esr=avg)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "method", "esr"])
            for r in rows:
                w.writerow([f"{r['label']:g}", r["method"].value, textfmt.fmt_float(r["esr"])])
            for method, avg in averages.items():
                w.writerow(["average", InterpMethod(method).value, textfmt.fmt_float(avg)])
        emit(csv=csv_path)


@main.command("gen-corpus")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--duration", type=float, default=6.0, show_default=True)
@click.option("--sample-rate", type=int, default=44100, show_default=True)
@click.option("--labels", default="40:100:10", show_default=True,
              help="start:stop:step range or comma-separated list.")
@click.option("--stimulus", type=click.Choice([s.value for s in synth.Stimulus]),
              default="noise-bursts", show_default=True)
@click.option("--mode", default="compressor", show_default=True)
def gen_corpus_cmd(out_dir, seed, duration, sample_rate, labels, stimulus, mode):
    """Generate a synthetic paired corpus with known ground truth.

    Ground-truth parameters follow a smooth built-in curve over the label
    range: compression deepens with the label (threshold falls, ratio
    rises, attack quickens, release slows), mimicking a single-knob unit.
    """
    if ":" in labels:
        parts = [float(v) for v in labels.split(":")]
        start, stop, step = parts if len(parts) == 3 else (*parts, 5.0)
        values = list(np.arange(start, stop + 0.5 * step, step))
    else:
        values = [float(v) for v in labels.split(",")]
    values.sort()
    lo = values[0]
    hi = values[-1] if values[-1] > values[0] else values[0] + 1.0
    curve = {
        "ct_db": [(lo, -26.0), (hi, -36.0)],
        "ratio": [(lo, 2.5), (hi, 6.0)],
        "attack_ms": [(lo, 4.0), (hi, 0.8)],
        "release_ms": [(lo, 100.0), (hi, 320.0)],
        "makeup_db": [(lo, 0.0), (hi, 1.5)],
    }
    spec = synth.CorpusSpec(seed=seed, duration=duration, sample_rate=sample_rate,
                            labels=values, theta_curve=curve,
                            stimulus=synth.Stimulus(stimulus), mode=mode)
    manifest = synth.generate(spec, out_dir)
    emit(manifest=manifest, labels=len(values))


@main.command("export-csv")
@click.option("--map", "map_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def export_csv_cmd(map_path, out_path):
    """Flatten a parameter map into CSV (label -> parameters table)."""
    pmap = load_map(map_path)
    export_csv(pmap, out_path)
    emit(csv=out_path, entries=len(pmap.entries))


def entrypoint():
    try:
        main(standalone_mode=True)
    except Exception as exc:  # pragma: no cover - click handles most paths
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entrypoint()

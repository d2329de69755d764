"""Damped Newton-Raphson with backtracking line search.

Each step solves H nu = g (never inverting H), backtracks tau from 1 by
halving until the Armijo-Goldstein sufficient-decrease condition

    L(theta - tau*nu) <= L(theta) - armijo_alpha * tau * g.nu

holds, and updates theta <- theta - tau*nu. Non-positive-semi-definite
Hessians, singular solves, non-descent directions and line-search
underflow all fall back to randomly sampled directions orthogonal to nu
(re-entering the line search, bounded retries). fit_chain warm-starts
each entry from the previous solution.
"""
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import Hessian, HessianStrategy, MatchProblem
from .compressor import CompressorParams, ParamBounds, ThetaRaw, constrain, default_init_params, unconstrain


class FitStatus(Enum):
    Converged = "converged"
    MaxIters = "max-iters"
    StalledNegativeCurvature = "stalled-negative-curvature"


@dataclass
class NROptions:
    armijo_alpha: float = 1e-4
    max_iters: int = 50
    grad_tol: float = 1e-9           # infinity norm of the gradient
    min_step: float = 2.0**-30
    max_curvature_retries: int = 10
    rng_seed: int = 0
    strategy: HessianStrategy = HessianStrategy.RevRev

    def __post_init__(self):
        if not 0.0 < self.armijo_alpha < 0.5:
            raise ValueError("armijo_alpha must lie in (0, 0.5)")
        if self.min_step <= 0:
            raise ValueError("min_step must be positive")


@dataclass
class StepRecord:
    """One accepted damped-Newton step (for audit of the descent rule)."""

    tau: float
    slope: float        # grad . direction, positive for descent
    loss_before: float
    loss_after: float
    escaped: bool       # step taken along a curvature-escape direction


@dataclass
class FitResult:
    theta: ThetaRaw
    params: CompressorParams
    loss_trajectory: list
    grad_norm: float
    hessian: Hessian
    status: FitStatus
    iters: int
    curvature_retries: int = 0
    steps: list = field(default_factory=list)


class LineSearchStall(RuntimeError):
    """tau underflowed min_step without satisfying the Armijo condition."""


def solve_step(H, g):
    """Solve H nu = g; returns (nu, psd_ok).

    Raises numpy.linalg.LinAlgError when H is singular or the solve
    residual exceeds 1e-10 * ||g|| (callers fall back to curvature escape).
    PSD status uses the smallest eigenvalue with a -1e-10*||H|| tolerance.
    """
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    nu = np.linalg.solve(H, g)
    gn = float(np.linalg.norm(g))
    res = float(np.linalg.norm(H @ nu - g))
    if not np.all(np.isfinite(nu)) or res > 1e-10 * max(gn, 1e-300):
        raise np.linalg.LinAlgError(f"ill-conditioned Newton solve (residual {res:.3e})")
    scale = float(np.max(np.abs(H)))
    psd_ok = bool(np.linalg.eigvalsh(H)[0] >= -1e-10 * max(scale, 1e-300))
    return nu, psd_ok


def line_search(theta, nu, loss_fn, current_loss, grad, opts):
    """Backtrack tau from 1 along theta - tau*nu; returns (tau, new_theta, new_loss)."""
    slope = float(np.dot(grad, nu))
    if not slope > 0.0:
        raise ValueError(f"non-descent direction: grad.nu = {slope}")
    tau = 1.0
    while tau >= opts.min_step:
        cand = theta - tau * nu
        cand_loss = loss_fn(cand)
        if cand_loss <= current_loss - opts.armijo_alpha * tau * slope:
            return tau, cand, cand_loss
        tau *= 0.5
    raise LineSearchStall(f"step underflow below {opts.min_step}")


def curvature_escape(nu, grad, rng):
    """Random direction orthogonal to nu, rescaled to ||nu||, signed downhill."""
    nu = np.asarray(nu, dtype=np.float64)
    norm_nu = float(np.linalg.norm(nu))
    if norm_nu == 0.0:
        nu = np.asarray(grad, dtype=np.float64)
        norm_nu = float(np.linalg.norm(nu))
    while True:
        d = rng.standard_normal(nu.shape[0])
        d -= (np.dot(d, nu) / (norm_nu * norm_nu)) * nu
        dn = float(np.linalg.norm(d))
        if dn > 1e-12:
            break
    d *= norm_nu / dn
    if float(np.dot(grad, d)) < 0.0:
        d = -d
    return d


@dataclass
class MinimizeResult:
    x: np.ndarray
    loss_trajectory: list = field(default_factory=list)
    grad_norm: float = math.inf
    status: FitStatus = FitStatus.MaxIters
    iters: int = 0
    curvature_retries: int = 0
    steps: list = field(default_factory=list)


def newton_minimize(loss_fn, grad_fn, hess_fn, x0, opts=None):
    """Generic damped-NR loop over plain arrays (hess_fn returns a matrix)."""
    opts = opts or NROptions()
    rng = np.random.default_rng(opts.rng_seed)
    x = np.asarray(x0, dtype=np.float64).copy()
    cur = float(loss_fn(x))
    res = MinimizeResult(x=x, loss_trajectory=[cur])
    for _ in range(opts.max_iters):
        g = np.asarray(grad_fn(x), dtype=np.float64)
        if not np.all(np.isfinite(g)) or not math.isfinite(cur):
            raise FloatingPointError(f"non-finite loss/gradient at iteration {res.iters}")
        res.grad_norm = float(np.max(np.abs(g)))
        if res.grad_norm < opts.grad_tol:
            res.status = FitStatus.Converged
            res.x = x
            return res
        H = hess_fn(x)
        H = H.matrix if isinstance(H, Hessian) else np.asarray(H, dtype=np.float64)
        nu = None
        try:
            nu, _psd_ok = solve_step(H, g)
        except np.linalg.LinAlgError:
            pass
        stepped = False
        # A descent Newton direction is used even when the Hessian is
        # slightly indefinite (the loss is only piecewise smooth, so tiny
        # negative eigenvalues occur near branch boundaries); the line
        # search still guarantees sufficient decrease. Escape handles
        # failed solves, non-descent directions and stalls.
        prev = cur
        escaped = False
        direction = nu
        if nu is not None and float(np.dot(g, nu)) > 0.0:
            try:
                tau, x, cur = line_search(x, nu, loss_fn, cur, g, opts)
                stepped = True
            except LineSearchStall:
                pass
        if not stepped:
            base = nu if nu is not None else g
            for _retry in range(opts.max_curvature_retries):
                res.curvature_retries += 1
                d = curvature_escape(base, g, rng)
                try:
                    tau, x, cur = line_search(x, d, loss_fn, cur, g, opts)
                    stepped = True
                    escaped = True
                    direction = d
                    break
                except LineSearchStall:
                    continue
            if not stepped:
                res.status = FitStatus.StalledNegativeCurvature
                res.x = x
                return res
        # The accepted step must satisfy the sufficient-decrease inequality.
        slope = float(np.dot(g, direction))
        assert cur <= prev - opts.armijo_alpha * tau * slope, "Armijo violated on accepted step"
        res.steps.append(StepRecord(tau, slope, prev, cur, escaped))
        res.loss_trajectory.append(cur)
        res.iters += 1
    res.status = FitStatus.MaxIters
    res.x = x
    return res


def fit(x, y, theta_init=None, bounds=None, opts=None, preemph=True,
        chunk_sec=12.0, overlap_sec=1.0, threads=None):
    """Fit compressor parameters to one dry/processed pair."""
    bounds = bounds if bounds is not None else ParamBounds()
    problem = MatchProblem(x, y, bounds=bounds, preemph=preemph,
                           chunk_sec=chunk_sec, overlap_sec=overlap_sec, threads=threads)
    return fit_problem(problem, theta_init, opts)


def fit_problem(problem, theta_init=None, opts=None):
    opts = opts or NROptions()
    if theta_init is None:
        theta_init = unconstrain(default_init_params(problem.sample_rate), problem.bounds)

    def loss_fn(v):
        return problem.loss(ThetaRaw.from_array(v))

    def grad_fn(v):
        return problem.gradient(ThetaRaw.from_array(v))

    def hess_fn(v):
        return problem.hessian(ThetaRaw.from_array(v), opts.strategy)

    res = newton_minimize(loss_fn, grad_fn, hess_fn, theta_init.as_array(), opts)
    theta = ThetaRaw.from_array(res.x)
    return FitResult(
        theta=theta,
        params=constrain(theta, problem.bounds, problem.sample_rate),
        loss_trajectory=res.loss_trajectory,
        grad_norm=res.grad_norm,
        hessian=problem.hessian(theta, opts.strategy),
        status=res.status,
        iters=res.iters,
        curvature_retries=res.curvature_retries,
        steps=res.steps,
    )


def fit_chain(corpus, theta_init=None, bounds=None, opts=None, preemph=True,
              chunk_sec=12.0, overlap_sec=1.0, threads=None):
    """Fit an ordered corpus of (label, (x, y)) pairs with warm starts.

    Entry k initialises from entry k-1's converged parameters (callers
    order labels heaviest-compression first). Per-entry failures are
    recorded without aborting the chain; the next entry re-uses the last
    successful parameters as its start.
    """
    bounds = bounds if bounds is not None else ParamBounds()
    results = []
    current_init = theta_init
    for label, (x, y) in corpus:
        try:
            r = fit(x, y, current_init, bounds, opts, preemph, chunk_sec, overlap_sec, threads)
        except Exception as exc:  # keep going with the previous start
            results.append((label, exc))
            continue
        results.append((label, r))
        current_init = r.theta
    return results

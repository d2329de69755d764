"""Analytic first- and second-order differentiation through the compressor.

The loss is the squared distance between (optionally pre-emphasised)
compressor output and target, summed over chunk evaluation regions. All
differentiation is hand-derived around three facts:

* the ballistics recursion g[n] = gtilde[n] + beta[n] g[n-1] has, with the
  branch indicator frozen, a reverse pass that is the same one-pole filter
  run in reversed time with the multiplier index shifted by one;
* forward-mode tangents of that recursion run through the identical filter
  in forward time (only the filter input changes);
* second-order propagation repeats the pattern once more, giving the four
  Hessian assembly strategies (reverse-over-reverse, forward-over-reverse,
  reverse-over-forward, forward-over-forward) as different compositions of
  the same filter primitives. With frozen branch masks all four agree up
  to floating-point noise, which the tests exploit as a cross-check.

Branch conventions (subgradients): the level floor and the min(0, .) clamp
contribute zero derivative when inactive-at-boundary, and the attack /
release indicator is treated as constant.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import scan
from .backend import get_backend
from .compressor import (
    DB_LN,
    ParamBounds,
    ThetaRaw,
    compress,
    constrain,
    gain_from_level,
    level_db,
    sigmoid_d1,
    sigmoid_d2,
)
from .io_wav import AudioBuffer, pair_validate, plan_chunks
from .metrics import preemphasis_adjoint, preemphasis_array


class HessianStrategy(Enum):
    RevRev = "rev-rev"
    FwdRev = "fwd-rev"
    RevFwd = "rev-fwd"
    FwdFwd = "fwd-fwd"


@dataclass
class Hessian:
    """5x5 second-derivative matrix in raw parameter space."""

    matrix: np.ndarray
    symmetrized: bool
    strategy: HessianStrategy
    asym: float = 0.0  # pre-symmetrisation ||H - H^T||_inf / ||H||_inf


def _shift_right(v, fill=0.0):
    out = np.empty_like(v)
    out[0] = fill
    out[1:] = v[:-1]
    return out


def _shift_left(v, fill=0.0):
    out = np.empty_like(v)
    out[-1] = fill
    out[:-1] = v[1:]
    return out


@dataclass
class _Phi:
    """Constrained parameters as plain scalars plus the linear make-up."""

    ct: float
    gamma: float
    R: float
    aat: float
    art: float
    k: float


def _phi_chain(theta, bounds, sample_rate):
    """Constrained scalars plus first/second sigmoid chain factors.

    C maps raw-space tangents/cotangents to constrained space; Cp holds
    the second derivative of each bounded map (zero for the pass-throughs).
    """
    p = constrain(theta, bounds, sample_rate)
    phi = _Phi(p.ct_db, p.makeup_db, p.ratio, p.alpha_at, p.alpha_rt, math.exp(DB_LN * p.makeup_db))
    r_lo, r_hi = bounds.ratio
    a_lo, a_hi = bounds.alpha_at_bounds(sample_rate)
    q_lo, q_hi = bounds.alpha_rt_bounds(sample_rate)
    spans = (r_hi - r_lo, a_hi - a_lo, q_hi - q_lo)
    raws = (theta.ratio_raw, theta.alpha_at_raw, theta.alpha_rt_raw)
    C = np.array([1.0, 1.0] + [s * sigmoid_d1(u) for s, u in zip(spans, raws)])
    Cp = np.array([0.0, 0.0] + [s * sigmoid_d2(u) for s, u in zip(spans, raws)])
    return phi, C, Cp


@dataclass
class _Chunk:
    """Per-chunk constants: input slice, level, transformed target, mask."""

    x: np.ndarray
    lvl: np.ndarray
    ty: np.ndarray
    eval_lo: int


@dataclass
class _Primal:
    act: np.ndarray        # gain-computer clamp active (q < 0)
    ghat: np.ndarray
    zeta: np.ndarray
    beta: np.ndarray
    alpha_sel: np.ndarray  # 1 - beta as selected (alpha_at or alpha_rt)
    g: np.ndarray
    gprev: np.ndarray
    yhat: np.ndarray
    r: np.ndarray          # transformed residual over the whole chunk
    loss: float


@dataclass
class _Backward:
    ybar: np.ndarray
    G: np.ndarray          # reversed-filter state: total dL/dg[n]
    ghat_bar: np.ndarray
    kbar: float
    sum_qbar: float
    sum_qbar_lvl: float    # sum of qbar * (ct - lvl)
    grad_phi: np.ndarray


@dataclass
class _Tangent:
    dq: np.ndarray
    dghat: np.ndarray
    dbeta: np.ndarray
    dg: np.ndarray
    dk: float
    dyhat: np.ndarray


class MatchProblem:
    """Chunked sound-matching objective for one dry/processed pair.

    Precomputes per-chunk constants (levels, pre-emphasised targets,
    evaluation masks); loss/gradient/Hessian evaluate chunks independently
    (optionally across a thread pool) and reduce in fixed chunk order, so
    results are bit-reproducible for a given configuration.
    """

    def __init__(self, x, y, bounds=None, preemph=True, chunk_sec=12.0,
                 overlap_sec=1.0, g_init=1.0, threads=None):
        pair_validate(x, y)
        self.sample_rate = x.sample_rate
        self.bounds = bounds if bounds is not None else ParamBounds()
        self.preemph = bool(preemph)
        self.g_init = float(g_init)
        self.threads = threads
        self.plan = plan_chunks(len(x), self.sample_rate, chunk_sec, overlap_sec)
        self.chunks = []
        for start, end, eval_start, _ in self.plan.regions():
            xc = np.ascontiguousarray(x.samples[start:end])
            yc = np.ascontiguousarray(y.samples[start:end])
            self.chunks.append(
                _Chunk(x=xc, lvl=level_db(xc), ty=self._transform(yc), eval_lo=eval_start - start)
            )

    # -- loss-head transform -------------------------------------------------
    def _transform(self, v):
        return preemphasis_array(v) if self.preemph else np.asarray(v, dtype=np.float64)

    def _transform_adjoint(self, v):
        return preemphasis_adjoint(v) if self.preemph else v

    def _map(self, fn):
        workers = self.threads if self.threads is not None else (os.cpu_count() or 1)
        if workers > 1 and len(self.chunks) > 1:
            # executor.map preserves chunk order: the reduction below is
            # deterministic regardless of completion order
            with ThreadPoolExecutor(max_workers=workers) as ex:
                return list(ex.map(fn, self.chunks))
        return [fn(cd) for cd in self.chunks]

    # -- primal ----------------------------------------------------------------
    def _primal(self, phi, cd):
        ghat, q = gain_from_level(cd.lvl, phi.ct, phi.R)
        act = q < 0.0
        zeta, beta, _gtilde, g = get_backend().ballistics_fwd(ghat, phi.aat, phi.art, self.g_init)
        alpha_sel = np.where(zeta, phi.aat, phi.art)
        gprev = _shift_right(g, self.g_init)
        yhat = cd.x * g * phi.k
        r = self._transform(yhat) - cd.ty
        re = r[cd.eval_lo:]
        return _Primal(act, ghat, zeta, beta, alpha_sel, g, gprev, yhat, r,
                       float(np.dot(re, re)))

    def _rbar(self, cd, ps):
        rbar = np.zeros_like(ps.r)
        rbar[cd.eval_lo:] = 2.0 * ps.r[cd.eval_lo:]
        return rbar

    # -- first-order reverse -----------------------------------------------------
    def _backward(self, phi, cd, ps):
        ybar = self._transform_adjoint(self._rbar(cd, ps))
        gbar = ybar * cd.x * phi.k
        kbar = float(np.dot(ybar, cd.x * ps.g))
        gamma_bar = DB_LN * phi.k * kbar
        G = scan.linrec_reversed(ps.beta, gbar)
        beta_bar = G * (ps.gprev - ps.ghat)
        ghat_bar = G * ps.alpha_sel
        att = ps.zeta != 0
        alpha_bar = -float(beta_bar[att].sum())
        rho_bar = -float(beta_bar[~att].sum())
        qbar = np.where(ps.act, DB_LN * ps.ghat * ghat_bar, 0.0)
        sum_qbar = float(qbar.sum())
        sum_qbar_lvl = float(np.dot(qbar, phi.ct - cd.lvl))
        ct_bar = (1.0 - 1.0 / phi.R) * sum_qbar
        R_bar = sum_qbar_lvl / phi.R**2
        grad_phi = np.array([ct_bar, gamma_bar, R_bar, alpha_bar, rho_bar])
        return _Backward(ybar, G, ghat_bar, kbar, sum_qbar, sum_qbar_lvl, grad_phi)

    # -- forward-mode tangent ------------------------------------------------------
    def _jvp(self, phi, dphi, cd, ps):
        dct, dgam, dR, daat, dart = dphi
        dq = dct * (1.0 - 1.0 / phi.R) + dR * (phi.ct - cd.lvl) / phi.R**2
        dghat = np.where(ps.act, DB_LN * ps.ghat * dq, 0.0)
        dbeta = -np.where(ps.zeta, daat, dart)
        u_in = ps.alpha_sel * dghat + dbeta * (ps.gprev - ps.ghat)
        dg = scan.linrec(ps.beta, u_in, 0.0)
        dk = DB_LN * phi.k * dgam
        dyhat = cd.x * (dg * phi.k + ps.g * dk)
        return _Tangent(dq, dghat, dbeta, dg, dk, dyhat)

    # -- shared reverse sweep through the primal graph -----------------------------
    def _primal_backprop(self, phi, cd, ps, vr=None, vg=None, vbeta=None,
                         vghat=None, vk=0.0):
        """Backpropagate injected cotangents on intermediate primal nodes
        down to the constrained parameters; returns a 5-vector in phi space."""
        ybar = self._transform_adjoint(vr) if vr is not None else np.zeros_like(ps.r)
        gbar = ybar * cd.x * phi.k
        if vg is not None:
            gbar = gbar + vg
        kbar = float(np.dot(ybar, cd.x * ps.g)) + vk
        gamma_bar = DB_LN * phi.k * kbar
        G2 = scan.linrec_reversed(ps.beta, gbar)
        beta_bar = G2 * (ps.gprev - ps.ghat)
        if vbeta is not None:
            beta_bar = beta_bar + vbeta
        ghat_bar = G2 * ps.alpha_sel
        if vghat is not None:
            ghat_bar = ghat_bar + vghat
        att = ps.zeta != 0
        alpha_bar = -float(beta_bar[att].sum())
        rho_bar = -float(beta_bar[~att].sum())
        qbar = np.where(ps.act, DB_LN * ps.ghat * ghat_bar, 0.0)
        ct_bar = (1.0 - 1.0 / phi.R) * float(qbar.sum())
        R_bar = float(np.dot(qbar, phi.ct - cd.lvl)) / phi.R**2
        return np.array([ct_bar, gamma_bar, R_bar, alpha_bar, rho_bar])

    # -- second order: forward-over-reverse (tangent of the reverse pass) ----------
    def _col_fwdrev(self, phi, dphi, cd, ps, bs, ts):
        dct, dgam, dR, _daat, _dart = dphi
        dr = self._transform(ts.dyhat)
        drbar = np.zeros_like(dr)
        drbar[cd.eval_lo:] = 2.0 * dr[cd.eval_lo:]
        dybar = self._transform_adjoint(drbar)
        dgbar = dybar * cd.x * phi.k + bs.ybar * cd.x * ts.dk
        dkbar = float(np.dot(dybar, cd.x * ps.g) + np.dot(bs.ybar, cd.x * ts.dg))
        dgamma_bar = DB_LN * (ts.dk * bs.kbar + phi.k * dkbar)
        dG = scan.linrec_reversed(ps.beta, dgbar + _shift_left(ts.dbeta * bs.G))
        dgprev = _shift_right(ts.dg)
        dbeta_bar = dG * (ps.gprev - ps.ghat) + bs.G * (dgprev - ts.dghat)
        dghat_bar = dG * ps.alpha_sel - bs.G * ts.dbeta
        att = ps.zeta != 0
        dalpha_bar = -float(dbeta_bar[att].sum())
        drho_bar = -float(dbeta_bar[~att].sum())
        dmbar = DB_LN * (ts.dghat * bs.ghat_bar + ps.ghat * dghat_bar)
        dqbar = np.where(ps.act, dmbar, 0.0)
        sum_dqbar = float(dqbar.sum())
        sum_dqbar_lvl = float(np.dot(dqbar, phi.ct - cd.lvl))
        dct_bar = (1.0 - 1.0 / phi.R) * sum_dqbar + dR * bs.sum_qbar / phi.R**2
        dR_bar = (
            sum_dqbar_lvl / phi.R**2
            + dct * bs.sum_qbar / phi.R**2
            - 2.0 * dR * bs.sum_qbar_lvl / phi.R**3
        )
        return np.array([dct_bar, dgamma_bar, dR_bar, dalpha_bar, drho_bar])

    # -- second order: reverse-over-reverse (reverse through the reverse pass) -----
    def _row_revrev(self, phi, utilde, cd, ps, bs):
        uct, ugam, uR, ua, ur = utilde
        qbar_t = np.where(
            ps.act, uct * (1.0 - 1.0 / phi.R) + uR * (phi.ct - cd.lvl) / phi.R**2, 0.0
        )
        s_R = uct * bs.sum_qbar / phi.R**2 - 2.0 * uR * bs.sum_qbar_lvl / phi.R**3
        s_ct = uR * bs.sum_qbar / phi.R**2
        # qbar = act * mbar collapses act into qbar_t above; mbar = c*ghat*ghat_bar.
        ghatbar_t = DB_LN * ps.ghat * qbar_t
        v_ghat = DB_LN * bs.ghat_bar * qbar_t
        betabar_t = -np.where(ps.zeta, ua, ur)
        Gdir = ghatbar_t * ps.alpha_sel + betabar_t * (ps.gprev - ps.ghat)
        v_beta = -ghatbar_t * bs.G
        v_g = _shift_left(betabar_t * bs.G)
        v_ghat = v_ghat - betabar_t * bs.G
        A = scan.linrec(ps.beta, Gdir, 0.0)
        v_beta = v_beta + _shift_right(A) * bs.G
        ybar_t = A * cd.x * phi.k
        s_k = float(np.dot(A, bs.ybar * cd.x))
        kbar_t = ugam * DB_LN * phi.k
        s_k += ugam * DB_LN * bs.kbar
        ybar_t = ybar_t + kbar_t * cd.x * ps.g
        v_g = v_g + kbar_t * bs.ybar * cd.x
        rbar_t = self._transform(ybar_t)
        v_r = np.zeros_like(rbar_t)
        v_r[cd.eval_lo:] = 2.0 * rbar_t[cd.eval_lo:]
        out = self._primal_backprop(phi, cd, ps, vr=v_r, vg=v_g, vbeta=v_beta,
                                    vghat=v_ghat, vk=s_k)
        out[0] += s_ct
        out[2] += s_R
        return out

    # -- second order: reverse-over-forward (reverse through the tangent pass) -----
    def _row_revfwd(self, phi, dphi, cd, ps, bs, ts):
        dct, dgam, dR, _daat, _dart = dphi
        dr = self._transform(ts.dyhat)
        v_r = np.zeros_like(dr)
        v_r[cd.eval_lo:] = 2.0 * dr[cd.eval_lo:]
        s_k = float(np.dot(bs.ybar, cd.x * ts.dg)) + DB_LN * dgam * bs.kbar
        v_g = bs.ybar * cd.x * ts.dk
        v_beta = bs.G * _shift_right(ts.dg) - bs.G * ts.dghat
        v_g = v_g + _shift_left(bs.G * ts.dbeta)
        v_ghat = -bs.G * ts.dbeta
        dm = np.where(ps.act, ts.dq, 0.0)
        v_ghat = v_ghat + DB_LN * bs.ghat_bar * dm
        s_R = dct * bs.sum_qbar / phi.R**2 - 2.0 * dR * bs.sum_qbar_lvl / phi.R**3
        s_ct = dR * bs.sum_qbar / phi.R**2
        out = self._primal_backprop(phi, cd, ps, vr=v_r, vg=v_g, vbeta=v_beta,
                                    vghat=v_ghat, vk=s_k)
        out[0] += s_ct
        out[2] += s_R
        return out

    # -- second order: forward-over-forward (degree-2 jets) ------------------------
    def _quad_fwdfwd(self, phi, dphi, ddphi, cd, ps):
        dct, dgam, dR, daat, dart = dphi
        ddct, ddgam, ddR, ddaat, ddart = ddphi
        lvl_off = phi.ct - cd.lvl
        f1 = dR / phi.R**2
        f2 = ddR / phi.R**2 - 2.0 * dR * dR / phi.R**3
        q1 = dct * (1.0 - 1.0 / phi.R) + f1 * lvl_off
        q2 = ddct * (1.0 - 1.0 / phi.R) + 2.0 * f1 * dct + f2 * lvl_off
        m1 = np.where(ps.act, q1, 0.0)
        m2 = np.where(ps.act, q2, 0.0)
        gh1 = DB_LN * ps.ghat * m1
        gh2 = ps.ghat * (DB_LN * m2 + (DB_LN * m1) ** 2)
        b1 = -np.where(ps.zeta, daat, dart)
        b2 = -np.where(ps.zeta, ddaat, ddart)
        a1 = -b1
        a2 = -b2
        w1 = a1 * ps.ghat + ps.alpha_sel * gh1
        w2 = a2 * ps.ghat + 2.0 * a1 * gh1 + ps.alpha_sel * gh2
        g1 = scan.linrec(ps.beta, w1 + b1 * ps.gprev, 0.0)
        g2 = scan.linrec(ps.beta, w2 + b2 * ps.gprev + 2.0 * b1 * _shift_right(g1), 0.0)
        k1 = DB_LN * phi.k * dgam
        k2 = phi.k * (DB_LN * ddgam + (DB_LN * dgam) ** 2)
        y1 = cd.x * (g1 * phi.k + ps.g * k1)
        y2 = cd.x * (g2 * phi.k + 2.0 * g1 * k1 + ps.g * k2)
        r1 = self._transform(y1)[cd.eval_lo:]
        r2 = self._transform(y2)[cd.eval_lo:]
        re = ps.r[cd.eval_lo:]
        d1 = 2.0 * float(np.dot(re, r1))
        d2 = 2.0 * float(np.dot(r1, r1) + np.dot(re, r2))
        return d1, d2

    # -- public objective interface -------------------------------------------------
    def loss(self, theta):
        phi, _, _ = _phi_chain(theta, self.bounds, self.sample_rate)
        return float(sum(self._map(lambda cd: self._primal(phi, cd).loss)))

    def loss_and_gradient(self, theta):
        phi, C, _ = _phi_chain(theta, self.bounds, self.sample_rate)

        def work(cd):
            ps = self._primal(phi, cd)
            bs = self._backward(phi, cd, ps)
            return ps.loss, bs.grad_phi

        parts = self._map(work)
        total = float(sum(p[0] for p in parts))
        grad_phi = np.sum([p[1] for p in parts], axis=0)
        return total, C * grad_phi

    def gradient(self, theta):
        return self.loss_and_gradient(theta)[1]

    def hessian(self, theta, strategy=HessianStrategy.RevRev, symmetrize=True):
        strategy = HessianStrategy(strategy)
        phi, C, Cp = _phi_chain(theta, self.bounds, self.sample_rate)
        eye = np.eye(5)
        H = np.zeros((5, 5))
        grad_phi_tot = np.zeros(5)

        if strategy in (HessianStrategy.FwdRev, HessianStrategy.RevFwd):
            def work(cd):
                ps = self._primal(phi, cd)
                bs = self._backward(phi, cd, ps)
                block = np.empty((5, 5))
                for j in range(5):
                    dphi = C * eye[j]
                    ts = self._jvp(phi, dphi, cd, ps)
                    if strategy is HessianStrategy.FwdRev:
                        block[:, j] = self._col_fwdrev(phi, dphi, cd, ps, bs, ts)
                    else:
                        block[j, :] = self._row_revfwd(phi, dphi, cd, ps, bs, ts)
                return bs.grad_phi, block

            for grad_phi, block in self._map(work):
                grad_phi_tot += grad_phi
                H += block
        elif strategy is HessianStrategy.RevRev:
            def work(cd):
                ps = self._primal(phi, cd)
                bs = self._backward(phi, cd, ps)
                block = np.empty((5, 5))
                for i in range(5):
                    utilde = C * eye[i]
                    block[i, :] = self._row_revrev(phi, utilde, cd, ps, bs)
                return bs.grad_phi, block

            for grad_phi, block in self._map(work):
                grad_phi_tot += grad_phi
                H += block
        else:  # FwdFwd
            def work(cd):
                ps = self._primal(phi, cd)
                bs = self._backward(phi, cd, ps)
                quad = np.empty((5, 5))
                diag = np.empty(5)
                for i in range(5):
                    _, d2 = self._quad_fwdfwd(phi, C * eye[i], Cp * eye[i], cd, ps)
                    diag[i] = d2
                for i in range(5):
                    quad[i, i] = diag[i]
                    for j in range(i + 1, 5):
                        dphi = C * (eye[i] + eye[j])
                        ddphi = Cp * (eye[i] + eye[j])
                        _, dij = self._quad_fwdfwd(phi, dphi, ddphi, cd, ps)
                        quad[i, j] = quad[j, i] = 0.5 * (dij - diag[i] - diag[j])
                return bs.grad_phi, quad

            for grad_phi, quad in self._map(work):
                grad_phi_tot += grad_phi
                H += quad
            raw = H  # jets already include the sigmoid curvature
            return _finish_hessian(raw, strategy, symmetrize)

        # phi-space accumulations -> raw space. Each block carries one index
        # already along a raw direction (scaled by C); the remaining phi
        # index picks up its own C factor, and the bounded maps' curvature
        # (sigmoid second derivative) lands on the diagonal.
        if strategy is HessianStrategy.FwdRev:
            raw = H * C[:, np.newaxis]  # rows are phi cotangents
        else:  # RevRev / RevFwd: columns are phi cotangents
            raw = H * C[np.newaxis, :]
        raw = raw + np.diag(Cp * grad_phi_tot)
        return _finish_hessian(raw, strategy, symmetrize)


def _finish_hessian(raw, strategy, symmetrize):
    denom = float(np.max(np.abs(raw))) or 1.0
    asym = float(np.max(np.abs(raw - raw.T))) / denom
    mat = 0.5 * (raw + raw.T) if symmetrize else raw
    return Hessian(matrix=mat, symmetrized=symmetrize, strategy=strategy, asym=asym)


# ---------------------------------------------------------------------------
# Single-signal primitives (whole buffer treated as one chunk).
# ---------------------------------------------------------------------------

def _single_context(x, theta, bounds, g_init, trace=None):
    bounds = bounds if bounds is not None else ParamBounds()
    phi, C, _ = _phi_chain(theta, bounds, x.sample_rate)
    lvl = trace.level_db if trace is not None and trace.level_db is not None else level_db(x)
    ghat, q = gain_from_level(lvl, phi.ct, phi.R)
    act = q < 0.0
    if trace is not None:
        zeta, beta, g = trace.zeta, trace.beta, trace.g
    else:
        zeta, beta, _gt, g = get_backend().ballistics_fwd(ghat, phi.aat, phi.art, g_init)
    alpha_sel = np.where(zeta, phi.aat, phi.art)
    gprev = _shift_right(g, g_init)
    return phi, C, lvl, act, ghat, zeta, beta, alpha_sel, g, gprev


def vjp_compressor(trace, x, theta, v, bounds=None, g_init=1.0):
    """Pull a per-sample cotangent on the compressor output back to raw
    parameter space (the compressor's vector-Jacobian product)."""
    phi, C, lvl, act, ghat, zeta, beta, alpha_sel, g, gprev = _single_context(
        x, theta, bounds, g_init, trace
    )
    v = np.asarray(v, dtype=np.float64)
    gbar = v * x.samples * phi.k
    kbar = float(np.dot(v, x.samples * g))
    gamma_bar = DB_LN * phi.k * kbar
    G = scan.linrec_reversed(beta, gbar)
    beta_bar = G * (gprev - ghat)
    ghat_bar = G * alpha_sel
    att = zeta != 0
    alpha_bar = -float(beta_bar[att].sum())
    rho_bar = -float(beta_bar[~att].sum())
    qbar = np.where(act, DB_LN * ghat * ghat_bar, 0.0)
    ct_bar = (1.0 - 1.0 / phi.R) * float(qbar.sum())
    R_bar = float(np.dot(qbar, phi.ct - lvl)) / phi.R**2
    return C * np.array([ct_bar, gamma_bar, R_bar, alpha_bar, rho_bar])


def jvp_compressor(trace, x, theta, dtheta, bounds=None, g_init=1.0):
    """Directional derivative of the compressor output along a raw-space
    tangent (the compressor's Jacobian-vector product)."""
    phi, C, lvl, act, ghat, zeta, beta, alpha_sel, g, gprev = _single_context(
        x, theta, bounds, g_init, trace
    )
    dct, dgam, dR, daat, dart = C * np.asarray(dtheta, dtype=np.float64)
    dq = dct * (1.0 - 1.0 / phi.R) + dR * (phi.ct - lvl) / phi.R**2
    dghat = np.where(act, DB_LN * ghat * dq, 0.0)
    dbeta = -np.where(zeta, daat, dart)
    u_in = alpha_sel * dghat + dbeta * (gprev - ghat)
    dg = scan.linrec(beta, u_in, 0.0)
    dk = DB_LN * phi.k * dgam
    return x.samples * (dg * phi.k + g * dk)


def _single_problem(x, y, bounds, preemph, g_init):
    """Whole pair as one chunk (evaluation from sample zero)."""
    dur = len(x) / x.sample_rate
    return MatchProblem(x, y, bounds=bounds, preemph=preemph,
                        chunk_sec=2 * dur, overlap_sec=0.0, g_init=g_init, threads=1)


def loss(theta, x, y, bounds=None, preemph=True, g_init=1.0):
    """Squared-distance loss over one pair (single-chunk convenience)."""
    return _single_problem(x, y, bounds, preemph, g_init).loss(theta)


def gradient(theta, x, y, bounds=None, preemph=True, g_init=1.0):
    return _single_problem(x, y, bounds, preemph, g_init).gradient(theta)


def vjp_backward(x, y, theta, u, bounds=None, preemph=False, g_init=1.0):
    """Row of the Hessian: VJP of the gradient map at cotangent u
    (reverse-over-reverse second-order propagation)."""
    prob = _single_problem(x, y, bounds, preemph, g_init)
    phi, C, Cp = _phi_chain(theta, prob.bounds, prob.sample_rate)
    u = np.asarray(u, dtype=np.float64)
    cd = prob.chunks[0]
    ps = prob._primal(phi, cd)
    bs = prob._backward(phi, cd, ps)
    row = prob._row_revrev(phi, C * u, cd, ps, bs) * C
    return row + u * Cp * bs.grad_phi


def jvp_backward(x, y, theta, dtheta, bounds=None, preemph=False, g_init=1.0):
    """Column of the Hessian: JVP of the gradient map along dtheta
    (forward-over-reverse second-order propagation)."""
    prob = _single_problem(x, y, bounds, preemph, g_init)
    phi, C, Cp = _phi_chain(theta, prob.bounds, prob.sample_rate)
    d = np.asarray(dtheta, dtype=np.float64)
    cd = prob.chunks[0]
    ps = prob._primal(phi, cd)
    bs = prob._backward(phi, cd, ps)
    ts = prob._jvp(phi, C * d, cd, ps)
    col = C * prob._col_fwdrev(phi, C * d, cd, ps, bs, ts)
    return col + d * Cp * bs.grad_phi


def hessian(theta, problem, strategy=HessianStrategy.RevRev, symmetrize=True):
    """Assemble the 5x5 Hessian of the chunked loss by the chosen strategy."""
    return problem.hessian(theta, strategy, symmetrize)


# ---------------------------------------------------------------------------
# Finite-difference oracles (used by grad-check, tests and acceptance).
# ---------------------------------------------------------------------------

def finite_diff_gradient(fn, theta, h=1e-6):
    """Central differences of a scalar function of ThetaRaw."""
    base = theta.as_array()
    out = np.empty(5)
    for i in range(5):
        tp = base.copy()
        tp[i] += h
        tm = base.copy()
        tm[i] -= h
        out[i] = (fn(ThetaRaw.from_array(tp)) - fn(ThetaRaw.from_array(tm))) / (2.0 * h)
    return out


def finite_diff_hessian(grad_fn, theta, h=1e-6):
    """Central differences of a gradient function of ThetaRaw."""
    base = theta.as_array()
    out = np.empty((5, 5))
    for i in range(5):
        tp = base.copy()
        tp[i] += h
        tm = base.copy()
        tm[i] -= h
        out[i, :] = (grad_fn(ThetaRaw.from_array(tp)) - grad_fn(ThetaRaw.from_array(tm))) / (2.0 * h)
    return 0.5 * (out + out.T)


def relative_error(approx, exact):
    """Component-wise |a - e| / max(|e|, 1e-8 * ||e||_inf), maximised."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    scale = max(float(np.max(np.abs(exact))), 1e-300)
    denom = np.maximum(np.abs(exact), 1e-8 * scale)
    return float(np.max(np.abs(approx - exact) / denom))


def _check_draw(seed, samples, sample_rate):
    """Seeded (stimulus, theta, target-theta) draw with both ballistic
    phases and the gain clamp well excited."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(samples) * 0.02
    # loud bursts so levels cross the threshold in both directions
    n_seg = max(2, samples // 250)
    for _ in range(n_seg):
        lo = int(rng.integers(0, max(1, samples - 50)))
        hi = min(samples, lo + int(rng.integers(40, 200)))
        x[lo:hi] *= rng.uniform(10.0, 40.0)
    xb = AudioBuffer(np.clip(x, -1.0, 1.0), sample_rate)
    theta = ThetaRaw.from_array(rng.normal(0.0, 0.8, 5) + np.array([-25.0, 0.5, 0, 0, 0]))
    theta_t = ThetaRaw.from_array(rng.normal(0.0, 0.8, 5) + np.array([-28.0, 0.0, 0, 0, 0]))
    return xb, theta, theta_t


def gradient_check_battery(draws=50, samples=1000, seed=0, h=1e-6, sample_rate=44100,
                           preemph=True):
    """Analytic gradient vs central finite differences over seeded draws.

    Returns (max_rel_err, per_draw list). The draw construction keeps all
    five parameters active so every gradient component is comparable.
    """
    errs = []
    bounds = ParamBounds()
    for k in range(draws):
        xb, theta, theta_t = _check_draw([seed, k], samples, sample_rate)
        yb, _ = compress(xb, theta_t, bounds)
        prob = _single_problem(xb, yb, bounds, preemph, 1.0)
        g = prob.gradient(theta)
        gfd = finite_diff_gradient(prob.loss, theta, h)
        errs.append(relative_error(g, gfd))
    return max(errs), errs


def hessian_check_battery(instances=10, samples=1000, seed=0, h=1e-6, sample_rate=44100,
                          preemph=True):
    """Pairwise strategy agreement plus agreement with FD of the gradient.

    Returns (max_pairwise_rel, max_fd_rel, per_instance list).
    """
    bounds = ParamBounds()
    pair_max = 0.0
    fd_max = 0.0
    rows = []
    for k in range(instances):
        xb, theta, theta_t = _check_draw([seed, 1000 + k], samples, sample_rate)
        yb, _ = compress(xb, theta_t, bounds)
        prob = _single_problem(xb, yb, bounds, preemph, 1.0)
        mats = [prob.hessian(theta, s).matrix for s in HessianStrategy]
        scale = max(float(np.max(np.abs(mats[0]))), 1e-300)
        pw = max(
            float(np.max(np.abs(mats[i] - mats[j]))) / scale
            for i in range(len(mats))
            for j in range(i + 1, len(mats))
        )
        hfd = finite_diff_hessian(prob.gradient, theta, h)
        fd = relative_error(mats[0], hfd)
        rows.append({"pairwise": pw, "fd": fd})
        pair_max = max(pair_max, pw)
        fd_max = max(fd_max, fd)
    return pair_max, fd_max, rows


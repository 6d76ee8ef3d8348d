"""Statistical-CSI RIS phase optimization by penalty dual decomposition.

For fixed receive scalars r and weights kappa, the weighted MSE
sum_k kappa_k mu_k E|r_k y_k - x_k|^2 is a quartic polynomial in the stacked
phase vector u.  It is written as F(u, u) for a function F(u, x) that is a
convex quadratic in u for fixed x and a convex quadratic in x for fixed u:

  * every squared mean |sum_s c_qs (hbar_ks^T hbar_qs^* + const)|^2 becomes
    |f(u, x)|^2 with hbar_ks taken at u and hbar_qs at x;
  * positive semidefinite quadratics in hbar (LoS x scattered covariances,
    scattered-power terms) stay in u;
  * indefinite quadratics (the mean signal amplitude and the mean x
    LoS-aided-scattering cross terms) are split symmetrically into
    1/2 [q(u, x) + q(x, u)].

The splitting problem  min F(u, x)  s.t. x = u, z = u, |z_i| = 1  is solved
with the augmented Lagrangian
  G = F(u, x) + Re(l1^H (x - u)) + Re(l2^H (z - u))
      + (||x - u||^2 + ||z - u||^2) / (2 xi)
by gradient steps on u and x, a closed-form z, and an outer multiplier /
penalty schedule.  Around it, r and kappa are refreshed from the closed-form
moments each round.

Complex gradients follow the Wirtinger convention: ``grad_G1`` returns
dG/du = conj(dG/du*), and a descent step is u <- u - step * conj(grad).
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import PhaseConfig, project_unit_modulus
from .rate import (StatisticalBlocks, _eta, closed_form_terms, closed_form_wsr, interference_scatter_power_cov,
                   interference_trace_cov, signal_scatter_power_cov, signal_trace_cov)
from .wmmse import WmmseState


# -- phase-independent blocks -----------------------------------------------------

@dataclass
class PhaseBlocks:
    """Linear maps from the stacked phase vector u (length L*N) to the mean
    channels and the LoS-aided scattering vectors:

      hbar_ks(u)      = B[k, s] @ u + d[k, s]
      Gam_kist(u)     = C[k, i, s, t] @ u

    together with the phase-independent second-order quantities."""

    B: np.ndarray        # (K, S, M, LN)
    d: np.ndarray        # (K, S, M)
    C: np.ndarray        # (K, K, S, S, M, LN)
    W: np.ndarray        # (K, S, S, M, M)
    chi: np.ndarray      # (K, S)
    sig2: np.ndarray     # (K, S)
    alpha2: np.ndarray   # (K, S)
    los_ip: np.ndarray   # (K, K, S)
    const_signal_cov: np.ndarray         # (K, S, S) trace + scattered-power covariances
    const_signal_same: np.ndarray        # (K, S)
    const_interf_cov: np.ndarray         # (K, K, S, S)
    M: int
    N: int
    L: int

    @property
    def size(self):
        return self.L * self.N

    def hbar(self, v):
        return (self.B.reshape(-1, self.size) @ v).reshape(self.d.shape) + self.d

    def gam(self, v):
        return (self.C.reshape(-1, self.size) @ v).reshape(self.C.shape[:-1])


def assemble_blocks(stats) -> PhaseBlocks:
    cfg = stats.config
    L, S, N, M, K = cfg.L, cfg.S, cfg.N, cfg.M, cfg.K
    aB, bB = stats.bs_ris.a, stats.bs_ris.b
    aR, bR = stats.ris_ue.a, stats.ris_ue.b
    # E[l, s, i] = Gbar_ls^T diag(hbar_r,li), shape (M, N)
    E = np.einsum("lsnm,lin->lsimn", stats.G_los, stats.hr_los)
    B = np.einsum("ls,lk,lskmn->ksmln", aB, aR, E).reshape(K, S, M, L * N)
    C = np.einsum("ls,lk,lt,li,lsimn->kistmln", aB, bR ** 2, bB ** 2, aR, E).reshape(K, K, S, S, M, L * N)
    d = stats.direct.a[..., None] * stats.hd_los
    blk = StatisticalBlocks(stats, PhaseConfig.identity(L, N) if L else PhaseConfig(np.zeros(0), 0, N))
    aB2, bB2, aR2, bR2 = aB ** 2, bB ** 2, aR ** 2, bR ** 2
    same = (2 * blk.sig2 * M * N * blk.alpha2 + M * blk.sig2 ** 2
            + 2 * M * N * np.einsum("ls,lk->ks", aB2 * bB2, bR2 ** 2)
            + 2 * M * N * np.einsum("ls,lk->ks", bB2 ** 2, aR2 * bR2)
            + M * N * np.einsum("ls,lk->ks", bB2 ** 2, bR2 ** 2))
    return PhaseBlocks(
        B=B, d=d, C=C, W=blk.W, chi=blk.chi, sig2=blk.sig2, alpha2=blk.alpha2, los_ip=blk.los_ip,
        const_signal_cov=signal_trace_cov(blk) + signal_scatter_power_cov(blk),
        const_signal_same=same,
        const_interf_cov=(interference_trace_cov(blk) + interference_scatter_power_cov(blk)).real,
        M=M, N=N, L=L)


# -- the bi-quadratic objective ---------------------------------------------------

class PhaseObjective:
    """F(u, x) for fixed (eta, r, kappa), with its u- and x-quadratic forms.

    The x-independent part of the u-quadratic is built once per instance.
    """

    def __init__(self, blocks: PhaseBlocks, eta, r, kappa, mu, N0):
        b = self.blocks = blocks
        # conjugated, flattened copies used by every gradient evaluation
        self._Bc = b.B.conj().reshape(-1, b.size)
        self._Cc = b.C.conj().reshape(-1, b.size)
        c = self.c = np.sqrt(_eta(eta))
        K, S = c.shape
        M, N = b.M, b.N
        r = np.asarray(r, dtype=complex)
        kappa, mu = np.asarray(kappa, float), np.asarray(mu, float)
        w = self.w = kappa * mu * np.abs(r) ** 2
        v = self.v = 2.0 * kappa * mu * r.real
        idx = np.arange(K)
        K0 = M * b.los_ip.astype(complex)
        K0[idx, idx] = M * b.chi
        self.K0 = K0
        # PSD quadratic in hbar: sum_p sum_st hbar_ps^H Om_pst hbar_pt
        Wbar = np.einsum("k,kstmp->stmp", w, b.W)
        Wc = np.einsum("is,it,istmp->stmp", c, c, b.W)
        rho = np.einsum("is,is->s", c ** 2, b.sig2)
        tau = np.einsum("k,ks->s", w, b.sig2)
        Om = np.einsum("ps,pt,stmq->pstmq", c, c, Wbar) + w[:, None, None, None, None] * Wc[None]
        diag = w[:, None] * rho[None, :] + c ** 2 * tau[None, :]
        sidx = np.arange(S)
        Om[:, sidx, sidx] += diag[:, :, None, None] * np.eye(M)
        self.Om = Om
        # weights on Re(hbar_is^H Gam_kist)
        Z = 2 * M * (np.einsum("k,is,it->kist", w, c, c) + np.einsum("i,ks,kt->kist", w, c, c))
        for s in range(S):
            Z[idx, idx, s, s] += 4.0 * w * c[:, s] ** 2
        self.Z = Z
        # u-independent constant
        off = 1.0 - np.eye(K)
        A_const = (np.einsum("ks,kt,kst->k", c, c, b.const_signal_cov)
                   + np.einsum("ks,ks->k", c ** 2, b.const_signal_same))
        e2c = M * N * b.alpha2
        B_const = (np.einsum("is,it,kist->ki", c, c, b.const_interf_cov)
                   + np.einsum("is,ks,is->ki", c ** 2, e2c, b.sig2)
                   + np.einsum("is,is,ks->ki", c ** 2, e2c, b.sig2)
                   + M * np.einsum("is,ks,is->ki", c ** 2, b.sig2, b.sig2)) * off
        self.const = float(w @ (A_const + B_const.sum(1)) + (kappa * mu * (np.abs(r) ** 2 * N0 + 1.0)).sum()
                           - np.einsum("k,ks,ks->", v, c, M * b.chi))
        # x-independent part of the u-quadratic
        LN = b.size
        X = np.einsum("pstmq,ptqn->psmn", Om, b.B).reshape(-1, LN)
        Bf = b.B.reshape(-1, LN)
        self.H_fixed = Bf.conj().T @ X
        self.H_fixed = 0.5 * (self.H_fixed + self.H_fixed.conj().T)
        self.g_fixed = Bf.conj().T @ np.einsum("pstmq,ptq->psm", Om, b.d).ravel()
        self.lmax_fixed = float(np.linalg.eigvalsh(self.H_fixed)[-1]) if LN else 0.0

    # pieces shared by eval_F and the quadratic forms
    def _J(self, h, G):
        return (np.einsum("kist,kistm->ism", self.Z, G, optimize=True).ravel() @ h.conj().ravel()).real

    def _mean_cross(self, hu, hx):
        return -np.einsum("k,ks,ksm,ksm->", self.v, self.c, hu.conj(), hx).real

    def eval_F(self, u, x):
        b = self.blocks
        hu, hx = b.hbar(u), b.hbar(x)
        f = np.einsum("qs,ksm,qsm->kq", self.c, hu, hx.conj()) + np.einsum("qs,kqs->kq", self.c, self.K0)
        val = float(self.w @ (np.abs(f) ** 2).sum(1))
        val += np.einsum("psm,pstmq,ptq->", hu.conj(), self.Om, hu).real
        val += 0.5 * (self._J(hx, b.gam(u)) + self._J(hu, b.gam(x)))
        val += self._mean_cross(hu, hx)
        return float(val + self.const)

    def _linear_common(self, h, G):
        """Gradient contribution (w.r.t. the free variable's conjugate) of the
        symmetric-split terms, given the other variable's hbar and Gam."""
        q1 = (self.Z[..., None] * h[None, :, :, None, :]).ravel() @ self._Cc
        V = np.einsum("kist,kistm->ism", self.Z, G)      # (K, S, M) with i -> k slot
        q2 = V.ravel() @ self._Bc
        gm = -0.5 * ((self.v[:, None] * self.c)[..., None] * h).ravel() @ self._Bc
        return 0.25 * (q1 + q2) + gm

    def _rank_terms(self, a, bcoef):
        LN = a.shape[-1]
        wa = (self.w[:, None, None] * a).reshape(-1, LN)
        H = wa.conj().T @ a.reshape(-1, LN)
        g = np.einsum("kq,kqn->n", self.w[:, None] * bcoef, a.conj())
        bound = float(self.w @ np.einsum("kqn,kqn->k", a, a.conj()).real)
        return H, g, bound

    def quad_u(self, x):
        """(H, g, Lipschitz bound) with F(u, x) = u^H H u + 2 Re(g^H u) + const(x)."""
        b = self.blocks
        hx = b.hbar(x)
        a = np.einsum("qs,ksmn,qsm->kqn", self.c, b.B, hx.conj())
        bc = np.einsum("qs,ksm,qsm->kq", self.c, b.d, hx.conj()) + np.einsum("qs,kqs->kq", self.c, self.K0)
        H, g, bound = self._rank_terms(a, bc)
        g = g + self.g_fixed + self._linear_common(hx, b.gam(x))
        return H + self.H_fixed, g, bound + self.lmax_fixed

    def quad_x(self, u):
        """(H, g, Lipschitz bound) with F(u, x) = x^H H x + 2 Re(g^H x) + const(u)."""
        b = self.blocks
        hu = b.hbar(u)
        a = np.einsum("qs,qsmn,ksm->kqn", self.c, b.B, hu.conj())
        bc = np.einsum("qs,qsm,ksm->kq", self.c, b.d, hu.conj()) + np.einsum("qs,kqs->kq", self.c, self.K0.conj())
        H, g, bound = self._rank_terms(a, bc)
        return H, g + self._linear_common(hu, b.gam(u)), bound


def make_objective(stats, blocks: PhaseBlocks, phases: PhaseConfig, eta, N0=None) -> tuple[PhaseObjective, WmmseState]:
    """Refresh (r, kappa) at the given phases and build F."""
    cfg = stats.config
    N0 = cfg.N0 if N0 is None else N0
    state = WmmseState.from_terms(closed_form_terms(stats, phases, eta), eta, N0)
    return PhaseObjective(blocks, eta, state.r, state.kappa, cfg.mu, N0), state


def eval_F(u, x, obj: PhaseObjective):
    return obj.eval_F(u, x)


def build_R_t(obj: PhaseObjective, x):
    """R, t such that F(., x) = u^T R u^* + u^T t + t^H u^* + const."""
    H, g, _ = obj.quad_u(x)
    return H.T, g.conj()


def build_Q_a(obj: PhaseObjective, u):
    """Q, a such that F(u, .) = x^T Q x^* + x^T a + a^H x^* + const."""
    H, g, _ = obj.quad_x(u)
    return H.T, g.conj()


# -- PDD pieces --------------------------------------------------------------------

def grad_G1(u, R, t, x, z, lam1, lam2, xi):
    """dG/du for the u-block of the augmented Lagrangian."""
    n = len(u)
    return (R + np.eye(n) / xi) @ u.conj() + t - (x + z + xi * lam1 + xi * lam2).conj() / (2 * xi)


def grad_G2(x, Q, a, u, lam1, xi):
    """dG/dx for the x-block of the augmented Lagrangian."""
    n = len(x)
    return (Q + np.eye(n) / (2 * xi)) @ x.conj() + a + (xi * lam1 - u).conj() / (2 * xi)


def update_z(u, lam2, xi):
    """Closest unit-modulus vector to u - xi*lam2 (zero entries map to 1)."""
    return project_unit_modulus(u - xi * lam2)


def augmented_lagrangian(obj: PhaseObjective, u, x, z, lam1, lam2, xi):
    return (obj.eval_F(u, x) + np.vdot(lam1, x - u).real + np.vdot(lam2, z - u).real
            + (np.vdot(x - u, x - u).real + np.vdot(z - u, z - u).real) / (2 * xi))


@dataclass
class PddState:
    u: np.ndarray
    x: np.ndarray
    z: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    xi: float
    c: float = 0.7
    inner_iters: int = 0
    outer_iters: int = 0

    @classmethod
    def start(cls, u0, xi, c=0.7):
        u0 = np.asarray(u0, dtype=complex)
        zero = np.zeros_like(u0)
        return cls(u0.copy(), u0.copy(), project_unit_modulus(u0), zero, zero.copy(), float(xi), c)

    @property
    def residual_x(self):
        return float(np.vdot(self.x - self.u, self.x - self.u).real)

    @property
    def residual_z(self):
        return float(np.vdot(self.z - self.u, self.z - self.u).real)


def outer_update(state: PddState) -> PddState:
    """Multiplier ascent and penalty decay: l1 += (x-u)/xi, l2 += (z-u)/xi, xi *= c."""
    if state.xi <= 0:
        raise ValueError("penalty parameter must be positive")
    return PddState(state.u, state.x, state.z,
                    state.lambda1 + (state.x - state.u) / state.xi,
                    state.lambda2 + (state.z - state.u) / state.xi,
                    state.xi * state.c, state.c, state.inner_iters, state.outer_iters + 1)


@dataclass
class PddOptions:
    xi0: float | str = "auto"       # initial penalty; "auto" = xi_scale / max(curvature, |grad F|/|u|)
    xi_scale: float = 0.1
    c: float = 0.7
    max_inner: int = 200
    max_outer: int = 30
    inner_tol: float = 1e-6
    residual_tol: float = 1e-6      # multiplied by L*N
    max_rounds: int = 20
    round_tol: float = 1e-6
    step: str = "lipschitz"         # or "backtracking"
    step0: float = 1e-2             # initial trial step for backtracking
    mode: str = "sequential"        # or "bcd" (x and z blocks evaluated concurrently)


@dataclass
class PhaseTrace:
    wsr: list = field(default_factory=list)           # closed-form weighted sum-rate per round
    accepted: list = field(default_factory=list)
    rows: list = field(default_factory=list)          # (round, outer iter, G, residual_x, residual_z, xi)
    inner_times: list = field(default_factory=list)   # seconds per inner iteration
    converged: bool = True
    final_residual: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["round", "iter", "objective", "residual_x", "residual_z", "xi"])
            for row in self.rows:
                wr.writerow([row[0], row[1]] + [f"{v:.12g}" for v in row[2:]])


def _step(grad_fn, value_fn, v, lipschitz, opts: PddOptions):
    """One descent step on a quadratic block; returns the new point."""
    direction = np.conj(grad_fn(v))
    if opts.step == "lipschitz":
        return v - direction / lipschitz
    alpha, f0 = opts.step0, value_fn(v)
    for _ in range(60):
        cand = v - alpha * direction
        if value_fn(cand) <= f0:
            return cand
        alpha *= 0.5
    return v


def run_pdd(obj: PhaseObjective, u0, opts: PddOptions | None = None, trace: PhaseTrace | None = None,
            round_index=0):
    """Minimize F(u, x) subject to x = u = z, |z| = 1 (one call of the inner
    PDD routine).  Returns the final PddState."""
    import time

    opts = opts or PddOptions()
    n = len(u0)
    if opts.xi0 == "auto":
        # the proximal move is about xi * |grad F|, so bound it by both the
        # curvature and the gradient size relative to |u0|
        u0 = np.asarray(u0, dtype=complex)
        H, g, bound = obj.quad_u(u0)
        grad = np.linalg.norm(H @ u0 + g) / max(np.linalg.norm(u0), 1e-300)
        xi0 = opts.xi_scale / max(bound, grad, 1e-300)
    else:
        xi0 = float(opts.xi0)
    st = PddState.start(u0, xi0, opts.c)
    pool = ThreadPoolExecutor(max_workers=2) if opts.mode == "bcd" else None
    try:
        for outer in range(opts.max_outer):
            xi = st.xi
            G_prev = augmented_lagrangian(obj, st.u, st.x, st.z, st.lambda1, st.lambda2, xi)
            for inner in range(opts.max_inner):
                t0 = time.perf_counter()
                x, z, l1, l2 = st.x, st.z, st.lambda1, st.lambda2
                Hu, gu, Lu = obj.quad_u(x)
                R, t = Hu.T, gu.conj()
                u = _step(lambda v: grad_G1(v, R, t, x, z, l1, l2, xi),
                          lambda v: augmented_lagrangian(obj, v, x, z, l1, l2, xi),
                          st.u, Lu + 1.0 / xi, opts)

                def x_block():
                    Hx, gx, Lx = obj.quad_x(u)
                    Q, a = Hx.T, gx.conj()
                    return _step(lambda v: grad_G2(v, Q, a, u, l1, xi),
                                 lambda v: augmented_lagrangian(obj, u, v, z, l1, l2, xi),
                                 x, Lx + 0.5 / xi, opts)

                if pool is not None:
                    fx = pool.submit(x_block)
                    fz = pool.submit(update_z, u, l2, xi)
                    x_new, z_new = fx.result(), fz.result()
                else:
                    x_new = x_block()
                    z_new = update_z(u, l2, xi)
                st = PddState(u, x_new, z_new, l1, l2, xi, st.c, st.inner_iters + 1, st.outer_iters)
                if trace is not None:
                    trace.inner_times.append(time.perf_counter() - t0)
                G = augmented_lagrangian(obj, st.u, st.x, st.z, l1, l2, xi)
                if abs(G - G_prev) <= opts.inner_tol * max(abs(G), 1e-300):
                    break
                G_prev = G
            if trace is not None:
                trace.rows.append((round_index, outer, G, st.residual_x, st.residual_z, xi))
            if max(st.residual_x, st.residual_z) < opts.residual_tol * n:
                break
            st = outer_update(st)
    finally:
        if pool is not None:
            pool.shutdown()
    return st


def optimize_phases(stats, eta, init: PhaseConfig, opts: PddOptions | None = None):
    """Alternate (r, kappa) refreshes with PDD phase updates.

    Each round's projected phases are kept only if the closed-form weighted
    sum-rate does not decrease; otherwise the loop stops at the previous
    phases.  Returns (PhaseConfig, PhaseTrace).
    """
    opts = opts or PddOptions()
    cfg = stats.config
    trace = PhaseTrace()
    best = PhaseConfig(init.u, init.L, init.N)
    best_wsr = closed_form_wsr(stats, best, eta)
    trace.wsr.append(best_wsr)
    trace.accepted.append(True)
    if cfg.L == 0 or best.u.size == 0:
        return best, trace
    blocks = assemble_blocks(stats)
    for rnd in range(opts.max_rounds):
        obj, _ = make_objective(stats, blocks, best, eta)
        st = run_pdd(obj, best.u, opts, trace, rnd)
        res = max(st.residual_x, st.residual_z)
        trace.final_residual = res
        if res >= 1e-3 * len(st.u):
            trace.converged = False
            warnings.warn(f"PDD did not reach consensus in round {rnd}: residual {res:.3g}")
        cand = PhaseConfig(st.u, cfg.L, cfg.N)
        wsr = closed_form_wsr(stats, cand, eta)
        ok = wsr >= best_wsr
        trace.accepted.append(ok)
        if not ok:
            trace.wsr.append(best_wsr)
            break
        change = (wsr - best_wsr) / max(abs(best_wsr), 1e-300)
        best, best_wsr = cand, wsr
        trace.wsr.append(wsr)
        if change < opts.round_tol:
            break
    return best, trace

"""Instantaneous-CSI power allocation by fractional programming and a
primal-dual subgradient (PDS) iteration.

Per iteration: the Lagrangian dual transform fixes eps = SINR, the quadratic
transform fixes y, and the resulting convex QCQP in
eta_bar = [sqrt(eta_11), ..., sqrt(eta_1S), ..., sqrt(eta_KS)] (user-major)

  min f(eta_bar) = eta_bar^T Xi eta_bar - 2 varpi^T eta_bar + delta
  s.t. g_s(eta_bar) = eta_bar^T Pi_s eta_bar - P_max <= 0

is advanced by PDS steps on the augmented Lagrangian
  L = f + zeta^T g+ + rho/2 ||g+||^2,   g+ = max(0, g).

The power variables are real, so Xi and varpi are the real parts of their
complex counterparts and the multipliers zeta are real and nonnegative.
``lagrangian_grad`` returns the complex-convention gradient
Xi eta_bar - varpi + sum_s (zeta_s + rho g_s+) Pi_s eta_bar, which is half of
the ordinary real gradient.

The PDS iteration itself runs on a rescaled copy of the QCQP (see
``normalize_qcqp``): variables are fractions of each BS budget and the
objective is divided by its curvature, so that rho and the step size are
dimensionless.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .channel import PowerAllocation, channel_gain
from .rate import LN2, _eta, mr_moments, sinr_from_moments


def compute_gamma(h, eta, N0):
    """Per-user SINR under MR precoding (coherent interference form)."""
    signal, pair = mr_moments(h, eta)
    return sinr_from_moments(signal, pair, N0)


def dual_transform_eps(gamma):
    """Optimal auxiliary variables of the Lagrangian dual transform: eps = gamma."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("SINR values must be nonnegative")
    return gamma.copy()


def dual_surrogate(eps, gamma, mu):
    """sum_k mu_k [ln(1+eps) - eps + (1+eps) gamma/(1+gamma)] / ln 2 (bits)."""
    eps, gamma = np.asarray(eps, float), np.asarray(gamma, float)
    return float(np.asarray(mu) @ (np.log1p(eps) - eps + (1 + eps) * gamma / (1 + gamma)) / LN2)


def _amplitude_and_total(h, eta, N0):
    c = np.sqrt(_eta(eta))
    amp = np.einsum("ks,ks->k", c, channel_gain(h))
    _, pair = mr_moments(h, eta)
    return amp, pair.sum(-1) + N0


def quadratic_transform_y(h, eta, eps, mu, N0):
    """y_k = sqrt(mu_k (1+eps_k)) sum_s sqrt(eta_ks)||h_ks||^2 / (sum_i |...|^2 + N0)."""
    amp, total = _amplitude_and_total(h, eta, N0)
    if np.any(total <= 0):
        raise ValueError("quadratic-transform denominator must be positive")
    return (np.sqrt(np.asarray(mu) * (1 + np.asarray(eps))) * amp / total).astype(complex)


def fp_objective(h, eta, eps, y, mu, N0):
    """Quadratic-transform objective sum_k 2 sqrt(mu(1+eps)) Re(y^* amp) - |y|^2 total."""
    amp, total = _amplitude_and_total(h, eta, N0)
    wgt = np.sqrt(np.asarray(mu) * (1 + np.asarray(eps)))
    return float((2 * wgt * (np.conj(y) * amp).real - np.abs(y) ** 2 * total).sum())


def ratio_objective(h, eta, eps, mu, N0):
    """sum_k (1+eps_k) mu_k signal_k / (sum_i |...|^2 + N0)."""
    amp, total = _amplitude_and_total(h, eta, N0)
    return float(((1 + np.asarray(eps)) * np.asarray(mu) * amp ** 2 / total).sum())


# -- QCQP --------------------------------------------------------------------------

@dataclass
class QcqpData:
    Xi: np.ndarray       # (KS, KS) real symmetric PSD, block diagonal
    varpi: np.ndarray    # (KS,)
    delta: float
    Pi: np.ndarray       # (S, KS): diagonal of Pi_s as rows
    P_max: np.ndarray    # (S,)

    def f(self, eta_bar):
        return float(eta_bar @ self.Xi @ eta_bar - 2 * self.varpi @ eta_bar + self.delta)

    def g(self, eta_bar):
        return self.Pi @ eta_bar ** 2 - self.P_max

    def g_plus(self, eta_bar):
        return np.maximum(0.0, self.g(eta_bar))


def to_eta_bar(eta):
    return np.sqrt(_eta(eta)).ravel()


def from_eta_bar(eta_bar, K, S):
    return np.asarray(eta_bar).reshape(K, S) ** 2


def assemble_qcqp(h, eps, y, mu, N0, P_max) -> QcqpData:
    K, S, _ = h.shape
    y = np.asarray(y, dtype=complex)
    d = np.einsum("ksm,ism->kis", h, h.conj())                     # d_ki[s] = h_ks^T h_is^*
    D = np.einsum("k,kis,kit->ist", np.abs(y) ** 2, d.conj(), d).real
    Xi = np.zeros((K * S, K * S))
    for i in range(K):
        Xi[i * S:(i + 1) * S, i * S:(i + 1) * S] = D[i]
    Xi = 0.5 * (Xi + Xi.T)
    gain = channel_gain(h)
    wgt = np.sqrt(np.asarray(mu) * (1 + np.asarray(eps)))
    varpi = ((wgt * y.conj()).real[:, None] * gain).ravel()
    Pi = np.zeros((S, K * S))
    for s in range(S):
        Pi[s, np.arange(K) * S + s] = gain[:, s]
    P = np.broadcast_to(np.asarray(P_max, dtype=float), (S,)).copy()
    return QcqpData(Xi, varpi, float((np.abs(y) ** 2).sum() * N0), Pi, P)


def normalize_qcqp(q: QcqpData):
    """Rescale to budget fractions: eta_bar = D * v with D_ks = sqrt(P_s)/||h_ks||,
    constraints sum_k v_ks^2 <= 1, objective divided by its largest curvature.
    Returns (normalized QcqpData, D, scale)."""
    S = q.Pi.shape[0]
    gains = q.Pi.sum(0)                                # ||h_ks||^2 in eta_bar order
    P_of = q.P_max[np.arange(q.Pi.shape[1]) % S]
    D = np.where(gains > 0, np.sqrt(P_of / np.where(gains > 0, gains, 1.0)), 0.0)
    Xi = D[:, None] * q.Xi * D[None, :]
    scale = float(np.linalg.eigvalsh(Xi)[-1]) if Xi.size else 1.0
    scale = scale if scale > 0 else 1.0
    Pi = (q.Pi * D[None, :] ** 2) / q.P_max[:, None]
    return QcqpData(Xi / scale, D * q.varpi / scale, q.delta / scale, Pi, np.ones(S)), D, scale


def lagrangian(eta_bar, zeta, q: QcqpData, rho):
    gp = q.g_plus(eta_bar)
    return q.f(eta_bar) + float(zeta @ gp) + 0.5 * rho * float(gp @ gp)


def lagrangian_grad(eta_bar, zeta, q: QcqpData, rho):
    """Xi eta_bar - varpi + sum_s (zeta_s + rho g_s+) omega_s, with
    omega_s = Pi_s eta_bar when g_s > 0 and 0 otherwise."""
    g = q.g(eta_bar)
    active = g > 0
    coef = np.where(active, zeta + rho * np.maximum(g, 0.0), 0.0)
    return q.Xi @ eta_bar - q.varpi + (coef[:, None] * q.Pi).sum(0) * eta_bar


def pds_step_size(eta_bar, zeta, q: QcqpData, rho, lam_max=None):
    """1 / (curvature bound of L at eta_bar) for the complex-convention gradient:
    lambda_max(Xi) + max_s (zeta_s + rho g_s+) max(Pi_s) + 2 rho max_s ||Pi_s eta_bar||^2.
    ``lam_max`` may supply lambda_max(Xi) when it is already known."""
    if lam_max is not None:
        lam = float(lam_max)
    else:
        lam = float(np.linalg.eigvalsh(q.Xi)[-1]) if q.Xi.size else 0.0
    gp = q.g_plus(eta_bar)
    pimax = q.Pi.max(1) if q.Pi.size else np.zeros(len(gp))
    bound = (lam + float(np.max((zeta + rho * gp) * pimax, initial=0.0))
             + 2 * rho * float(np.max((q.Pi * eta_bar) @ (q.Pi * eta_bar).T, initial=0.0)))
    return 1.0 / max(bound, 1e-300)


@dataclass
class PdsState:
    eta_bar: np.ndarray
    zeta: np.ndarray
    rho: float = 10.0
    alpha2: float = 1e-3
    epsilon: np.ndarray | None = None
    y: np.ndarray | None = None


def pds_step(state: PdsState, q: QcqpData, P_max=None) -> PdsState:
    """Simultaneous primal descent / dual ascent, then projection onto
    eta_bar >= 0 and zeta >= 0."""
    if state.alpha2 <= 0:
        raise ValueError("step size must be positive")
    grad = lagrangian_grad(state.eta_bar, state.zeta, q, state.rho)
    gp = q.g_plus(state.eta_bar)
    eta_bar = np.maximum(0.0, state.eta_bar - state.alpha2 * grad)
    zeta = np.maximum(0.0, state.zeta + state.alpha2 * gp)
    return PdsState(eta_bar, zeta, state.rho, state.alpha2, state.epsilon, state.y)


# -- Algorithm driver --------------------------------------------------------------

@dataclass
class PdsOptions:
    rho: float = 10.0
    alpha0: float = 1.0         # multiple of the curvature-bound step
    max_iter: int = 500
    tol: float = 1e-6
    steps_per_update: int = 30  # PDS steps per (eps, y) refresh
    patience: int = 5           # consecutive sub-tolerance changes before stopping
    single_user_starts: bool = False   # also start from each user holding most of the budget
    start_leak: float = 0.1            # budget fraction shared by the other users in those starts
    max_assignments: int = 64          # enumerate per-BS dominant users up to this many starts


@dataclass
class PowerTrace:
    objective: list = field(default_factory=list)   # weighted sum-rate of the feasible iterate
    violation: list = field(default_factory=list)   # max relative violation before rescaling
    step: list = field(default_factory=list)
    converged: bool = False
    final_violation: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "objective", "max_violation", "step"])
            for j, (o, v, a) in enumerate(zip(self.objective, self.violation, self.step)):
                wr.writerow([j, f"{o:.12g}", f"{v:.6g}", f"{a:.6g}"])


def uniform_power(h, P_max):
    """eta_ks = P_s / (K ||h_ks||^2): every BS spends its budget equally."""
    K, S, _ = h.shape
    gain = channel_gain(h)
    P = np.broadcast_to(np.asarray(P_max, dtype=float), (S,))
    eta = np.where(gain > 0, P[None, :] / (K * np.where(gain > 0, gain, 1.0)), 0.0)
    return PowerAllocation(eta)


def _wsr(h, eta, mu, N0):
    return float(np.log2(1.0 + compute_gamma(h, eta, N0)) @ mu)


def _scale_to_budget(eta, h, P):
    """Scale each BS's coefficients down so that its budget holds."""
    used = np.einsum("ks,ks->s", eta, channel_gain(h))
    fac = np.where(used > P, P / np.where(used > 0, used, 1.0), 1.0)
    return eta * fac[None, :]


def optimize_power(h, init: PowerAllocation | None, config, opts: PdsOptions | None = None):
    """Maximize sum_k mu_k log2(1 + SINR_k) over eta subject to per-BS budgets.

    ``h`` are the effective channels (K, S, M) of one coherence interval.
    Every iterate is rescaled per BS onto the feasible set and, if needed,
    pulled back toward the previous iterate until the fractional-programming
    surrogate has not decreased, so the weighted sum-rate trace is monotone.
    The best feasible allocation is returned with the trace.
    With ``single_user_starts`` the iteration is repeated from allocations in
    which one user holds most of each BS budget (every per-BS assignment when
    there are at most ``max_assignments`` of them), and the best run is kept.
    """
    opts = opts or PdsOptions()
    h = np.asarray(h)
    K, S, _ = h.shape
    P = np.full(S, float(config.P_max))
    eta0 = uniform_power(h, P).eta if init is None else _eta(init).copy()
    best_alloc, best_trace = _run_pds(h, eta0, config, opts)
    if opts.single_user_starts and K > 1:
        gain = channel_gain(h)
        safe = np.where(gain > 0, gain, 1.0)
        # every BS gets its own dominant user when that is affordable,
        # otherwise the same user dominates all budgets
        if K ** S <= opts.max_assignments:
            assignments = itertools.product(range(K), repeat=S)
        else:
            assignments = ((k,) * S for k in range(K))
        for assign in assignments:
            share = np.full((K, S), opts.start_leak / (K - 1))
            share[list(assign), range(S)] = 1.0 - opts.start_leak
            eta = np.where(gain > 0, share * P[None, :] / safe, 0.0)
            alloc, tr = _run_pds(h, eta, config, opts)
            if tr.objective and max(tr.objective) > max(best_trace.objective):
                best_alloc, best_trace = alloc, tr
    return best_alloc, best_trace


def _pds_steps(v, zeta, q: QcqpData, opts: PdsOptions):
    """``steps_per_update`` iterations of ``pds_step`` with the curvature-bound
    step size, on a normalized QCQP (lambda_max(Xi) = 1); the constraint
    values are computed once per step."""
    rho, pimax = opts.rho, q.Pi.max(1)
    alpha = 0.0
    for _ in range(opts.steps_per_update):
        g = q.Pi @ v ** 2 - q.P_max
        gp = np.maximum(g, 0.0)
        piv = q.Pi * v
        bound = 1.0 + float(np.max((zeta + rho * gp) * pimax)) + 2 * rho * float(np.max(piv @ piv.T))
        alpha = opts.alpha0 / bound
        coef = np.where(g > 0, zeta + rho * gp, 0.0)
        grad = q.Xi @ v - q.varpi + (coef @ q.Pi) * v
        v = np.maximum(0.0, v - alpha * grad)
        zeta = np.maximum(0.0, zeta + alpha * gp)
    return v, zeta, alpha


def _run_pds(h, eta, config, opts: PdsOptions):
    K, S, _ = h.shape
    mu = np.asarray(config.mu, dtype=float)
    N0 = config.N0
    P = np.full(S, float(config.P_max))
    eta = _scale_to_budget(eta, h, P)
    trace = PowerTrace()
    best_eta, best = eta, _wsr(h, eta, mu, N0)
    trace.objective.append(best)
    trace.violation.append(0.0)
    trace.step.append(0.0)
    zeta = np.zeros(S)
    calm, last, prev_scale = 0, best, None
    for _ in range(opts.max_iter):
        eps = dual_transform_eps(compute_gamma(h, eta, N0))
        y = quadratic_transform_y(h, eta, eps, mu, N0)
        q = assemble_qcqp(h, eps, y, mu, N0, P)
        qn, D, scale = normalize_qcqp(q)
        if prev_scale is not None:
            zeta = zeta * prev_scale / scale          # keep multipliers in objective units
        prev_scale = scale
        v = np.where(D > 0, to_eta_bar(eta) / np.where(D > 0, D, 1.0), 0.0)
        v, zeta, alpha = _pds_steps(v, zeta, qn, opts)
        raw = from_eta_bar(D * v, K, S)
        viol = float(np.max(np.einsum("ks,ks->s", raw, channel_gain(h)) / P - 1.0))
        # the surrogate built at eta is tight there and concave in eta_bar, and
        # the feasible set is convex: shrink the move until it does not decrease
        old_bar, f_old = to_eta_bar(eta), q.f(to_eta_bar(eta))
        new_bar = to_eta_bar(_scale_to_budget(raw, h, P))
        t = 1.0
        while q.f(old_bar + t * (new_bar - old_bar)) > f_old and t > 1e-6:
            t *= 0.5
        if q.f(old_bar + t * (new_bar - old_bar)) <= f_old:
            eta = from_eta_bar(old_bar + t * (new_bar - old_bar), K, S)
        val = _wsr(h, eta, mu, N0)
        trace.objective.append(val)
        trace.violation.append(max(viol, 0.0))
        trace.step.append(alpha)
        if val > best:
            best, best_eta = val, eta
        calm = calm + 1 if abs(val - last) <= opts.tol * max(abs(last), 1e-300) else 0
        last = val
        if calm >= opts.patience:
            trace.converged = True
            break
    alloc = PowerAllocation(best_eta)
    trace.final_violation = alloc.violation(h, P)
    return alloc, trace

"""Achievable rates under MR precoding: instantaneous SINR, Monte-Carlo ergodic
estimates, and the closed-form statistical approximation built from the
second moments A_k = E|sum_s sqrt(eta_ks) ||h_ks||^2|^2 and
B_ki = E|sum_s sqrt(eta_is) h_ks^T h_is^*|^2.

The moments are exact for the Rician model.  They are obtained by conditioning
on the scattered RIS->user components: given those, each h_ks is Gaussian in
the remaining (independent) BS-side scattering, and what is left is an
expectation of polynomials of degree <= 4 in a circular Gaussian vector.
Each named sub-term below is one of those pieces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, PhaseConfig, PowerAllocation, channel_gain, effective_channel, sample_channels

LN2 = np.log(2.0)


def _eta(eta):
    return eta.eta if isinstance(eta, PowerAllocation) else np.asarray(eta, dtype=float)


# -- instantaneous -------------------------------------------------------------

@dataclass
class RateReport:
    sinr: np.ndarray
    rate: np.ndarray
    weighted_sum: float
    signal: np.ndarray
    interference: np.ndarray
    noise: float


def mr_moments(h, eta):
    """Signal |sum_s sqrt(eta_ks)||h_ks||^2|^2 (..., K) and pairwise interference
    |sum_s sqrt(eta_is) h_ks^T h_is^*|^2 (..., K, K) for effective channels h."""
    c = np.sqrt(_eta(eta))
    signal = np.einsum("ks,...ks->...k", c, channel_gain(h)) ** 2
    cross = np.einsum("...ksm,...ism,is->...ki", h, h.conj(), c)
    return signal, np.abs(cross) ** 2


def sinr_from_moments(signal, pair, N0):
    K = pair.shape[-1]
    off = pair * (1.0 - np.eye(K))
    return signal / (off.sum(-1) + N0)


def instantaneous_rate(real, eta, config, phases: PhaseConfig | None = None) -> RateReport:
    """Per-user SINR and rate for one realization (or precomputed channels h)."""
    eta = _eta(eta)
    if np.any(eta < 0):
        raise ValueError("power coefficients must be nonnegative")
    if isinstance(real, ChannelRealization):
        h = real.effective(phases) if phases is not None else real.hd
    else:
        h = np.asarray(real)
    if h.shape[-3:-1] != eta.shape:
        raise ValueError(f"channel shape {h.shape} does not match eta {eta.shape}")
    signal, pair = mr_moments(h, eta)
    interf = (pair * (1.0 - np.eye(config.K))).sum(-1)
    sinr = signal / (interf + config.N0)
    rate = np.log2(1.0 + sinr)
    return RateReport(sinr, rate, float(np.dot(config.mu, rate)), signal, interf, config.N0)


def weighted_sum_rate(h, eta, config):
    signal, pair = mr_moments(h, eta)
    return np.log2(1.0 + sinr_from_moments(signal, pair, config.N0)) @ np.asarray(config.mu)


# -- Monte Carlo -----------------------------------------------------------------

@dataclass
class MonteCarloResult:
    rate: np.ndarray          # per-user estimate
    rate_se: np.ndarray
    weighted_sum: float
    weighted_sum_se: float
    signal_moment: np.ndarray      # sample mean of the signal term (A_k)
    signal_moment_se: np.ndarray
    pair_moment: np.ndarray        # sample mean of interference terms (B_ki)
    pair_moment_se: np.ndarray
    n_samples: int
    mode: str


def _batches(n, chunk):
    done = 0
    while done < n:
        m = min(chunk, n - done)
        yield m
        done += m


def monte_carlo_rate(stats, phases, eta, n_samples, seed=None, mode="moment-ratio", chunk=2000,
                     mu=None, N0=None) -> MonteCarloResult:
    """Monte-Carlo ergodic rate.

    mode="true-ergodic" averages log2(1 + SINR) over draws; mode="moment-ratio"
    averages numerator and denominator separately and then forms
    log2(1 + E[num] / (E[den] + N0)), which is what the closed form targets.
    Standard errors use the delta method for the ratio mode.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if mode not in ("moment-ratio", "true-ergodic"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = stats.config
    mu = np.asarray(cfg.mu if mu is None else mu)
    N0 = cfg.N0 if N0 is None else N0
    K = cfg.K
    rng = np.random.default_rng(seed)
    sig, pair, logs = [], [], []
    for m in _batches(n_samples, chunk):
        real = sample_channels(stats, rng, n=m)
        h = effective_channel(real, phases)
        s, p = mr_moments(h, eta)
        sig.append(s)
        pair.append(p)
        if mode == "true-ergodic":
            logs.append(np.log2(1.0 + sinr_from_moments(s, p, N0)))
    sig = np.concatenate(sig)
    pair = np.concatenate(pair)
    n = len(sig)
    mask = 1.0 - np.eye(K)
    den = (pair * mask).sum(-1)

    def se(x):
        return x.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(x.shape[1:])

    A_hat, D_hat = sig.mean(0), den.mean(0)
    if mode == "moment-ratio":
        ratio = A_hat / (D_hat + N0)
        rate = np.log2(1.0 + ratio)
        dA = 1.0 / ((1.0 + ratio) * LN2 * (D_hat + N0))
        dD = -ratio / ((1.0 + ratio) * LN2 * (D_hat + N0))
        influence = (sig - A_hat) * dA + (den - D_hat) * dD   # (n, K)
        rate_se = se(influence)
        wsr_se = float(se(influence @ mu))
    else:
        logs = np.concatenate(logs)
        rate = logs.mean(0)
        rate_se = se(logs)
        wsr_se = float(se(logs @ mu))
    return MonteCarloResult(rate, rate_se, float(rate @ mu), wsr_se, A_hat, se(sig),
                            pair.mean(0) * mask, se(pair) * mask, n, mode)


# -- statistical building blocks --------------------------------------------------

class StatisticalBlocks:
    """Phase-dependent statistical quantities shared by the closed form and the
    RIS optimizer.

    Attributes (K users, S BSs, L RISs, M antennas):
      hbar   (K, S, M)          mean effective channel
      W      (K, S, S, M, M)    W[k,s,t] = sum_l b_r,lk^2 a_ls a_lt Gbar_ls^T conj(Gbar_lt)
      Gam    (K, K, S, t, M)    Gam[k,i,s,t] = sum_l a_ls b_r,lk^2 b_lt^2 a_r,li Gbar_ls^T Theta_l hbar_r,li
      los_ip (K, K, S)          sum_l b_ls^2 a_r,li a_r,lk hbar_r,li^H hbar_r,lk
    """

    def __init__(self, stats, phases: PhaseConfig):
        cfg = stats.config
        self.stats = stats
        self.M, self.N, self.K, self.S, self.L = cfg.M, cfg.N, cfg.K, cfg.S, cfg.L
        aB, bB = stats.bs_ris.a, stats.bs_ris.b
        aR, bR = stats.ris_ue.a, stats.ris_ue.b
        self.aB, self.bB, self.aR, self.bR = aB, bB, aR, bR
        self.aD, self.bD = stats.direct.a, stats.direct.b
        self.alpha1, self.alpha2, self.alpha3 = stats.alpha1, stats.alpha2, stats.alpha3
        self.chi = stats.chi
        # scattered power reaching the user through non-LoS BS-side paths
        self.sig2 = self.bD ** 2 + self.N * (self.alpha1 + self.alpha3)
        theta = phases.theta if self.L else np.zeros((0, self.N))
        v = theta[:, None, :] * stats.hr_los                                   # (L, K, N)
        self.y = np.einsum("lsnm,lkn->lskm", stats.G_los, v)                   # Gbar^T Theta hbar_r
        self.hbar = np.einsum("ls,lk,lskm->ksm", aB, aR, self.y) + self.aD[..., None] * stats.hd_los
        GtG = np.einsum("lsnm,ltnp->lstmp", stats.G_los, stats.G_los.conj())
        self.W = np.einsum("lk,ls,lt,lstmp->kstmp", bR ** 2, aB, aB, GtG)
        self.Gam = np.einsum("ls,lk,lt,li,lsim->kistm", aB, bR ** 2, bB ** 2, aR, self.y)
        ip = np.einsum("lin,lkn->lik", stats.hr_los.conj(), stats.hr_los)
        self.los_ip = np.einsum("ls,li,lk,lik->kis", bB ** 2, aR, aR, ip)
        self.hnorm2 = channel_gain(self.hbar)                                  # (K, S)


# -- signal moment A_k: named sub-terms --------------------------------------------

def signal_mean(blk):
    """E||h_ks||^2 = ||hbar_ks||^2 + M chi_ks, shape (K, S)."""
    return blk.hnorm2 + blk.M * blk.chi


def signal_los_scatter_cov(blk):
    """Covariance of ||h_ks||^2 and ||h_kt||^2 through the shared RIS->user
    scattering seen along the LoS BS->RIS paths: 2 Re(hbar_ks^H W_kst hbar_kt)."""
    return 2.0 * np.einsum("ksm,kstmp,ktp->kst", blk.hbar.conj(), blk.W, blk.hbar).real


def signal_ris_phase_cov(blk):
    """Cross terms between the mean channel and the LoS-aided scattered power,
    the only place the phases enter besides hbar: 2M Re(hbar_ks^H Gam_kkst) + (s<->t)."""
    K = blk.K
    g = np.einsum("ksm,kstm->kst", blk.hbar.conj(), blk.Gam[np.arange(K), np.arange(K)])
    x = 2.0 * blk.M * g.real
    return x + x.transpose(0, 2, 1)


def signal_trace_cov(blk):
    """Fourth-order LoS term ||W_kst||_F^2 (double RIS sum of Gram traces)."""
    return np.einsum("kstmp,kstmp->kst", blk.W, blk.W.conj()).real


def signal_scatter_power_cov(blk):
    """Covariance of the scattered powers (RIS->user scattering shared across BSs)."""
    M, N = blk.M, blk.N
    aB2, bB2, aR2, bR2 = blk.aB ** 2, blk.bB ** 2, blk.aR ** 2, blk.bR ** 2
    t1 = 2 * M ** 2 * N * np.einsum("ls,lt,lk->kst", bB2, bB2, aR2 * bR2)
    t2 = M ** 2 * N * np.einsum("ls,lt,lk->kst", aB2, bB2, bR2 ** 2)
    t3 = M ** 2 * N * np.einsum("ls,lt,lk->kst", bB2, bB2, bR2 ** 2)
    return t1 + t2 + t2.transpose(0, 2, 1) + t3


def signal_same_bs_excess(blk):
    """Extra E||h_ks||^4 contribution beyond the product of means for s = t
    (BS-side scattering is independent across BSs), shape (K, S)."""
    M, N = blk.M, blk.N
    aB2, bB2, aR2, bR2 = blk.aB ** 2, blk.bB ** 2, blk.aR ** 2, blk.bR ** 2
    cross = np.einsum("ksm,ksm->ks", blk.hbar.conj(), _gam_diag(blk)).real
    return (2.0 * blk.sig2 * (blk.hnorm2 + M * N * blk.alpha2)
            + 4.0 * cross
            + M * blk.sig2 ** 2
            + 2 * M * N * np.einsum("ls,lk->ks", aB2 * bB2, bR2 ** 2)
            + 2 * M * N * np.einsum("ls,lk->ks", bB2 ** 2, aR2 * bR2)
            + M * N * np.einsum("ls,lk->ks", bB2 ** 2, bR2 ** 2))


def _gam_diag(blk):
    K, S = blk.K, blk.S
    return blk.Gam[np.arange(K), np.arange(K)][:, np.arange(S), np.arange(S)]   # (K, S, M)


def signal_moment(blk, eta):
    """A_k, shape (K,)."""
    c = np.sqrt(_eta(eta))
    mean = signal_mean(blk)
    cov = (signal_los_scatter_cov(blk) + signal_ris_phase_cov(blk) + signal_trace_cov(blk)
           + signal_scatter_power_cov(blk))
    A = np.einsum("ks,ks,kt,kt->k", c, mean, c, mean) + np.einsum("ks,kst,kt->k", c, cov, c)
    return A + np.einsum("ks,ks->k", c ** 2, signal_same_bs_excess(blk))


def signal_moment_as_printed(blk, eta):
    """The signal moment in the arrangement commonly quoted for this model.

    Kept for comparison only: it counts the mean/scatter cross term
    ||hbar||^2 sigma^2 once instead of twice, replaces the same-BS
    scattered-power variance by N^2 M alpha1 alpha3, and drops the
    LoS/scattered covariance through a_ls^2 b_lt^2 b_r^4.  Monte Carlo
    rejects it (see tests); the exact signal_moment is used everywhere.
    """
    c = np.sqrt(_eta(eta))
    M, N = blk.M, blk.N
    mean = signal_mean(blk)
    bB2, aR2, bR2 = blk.bB ** 2, blk.aR ** 2, blk.bR ** 2
    cov = signal_los_scatter_cov(blk) + signal_ris_phase_cov(blk) + signal_trace_cov(blk)
    cov = cov + 2 * M ** 2 * N * np.einsum("ls,lt,lk->kst", bB2, bB2, aR2 * bR2) \
        + M ** 2 * N * np.einsum("ls,lt,lk->kst", bB2, bB2, bR2 ** 2)
    same = (M * blk.chi ** 2 + blk.hnorm2 * blk.sig2 - N ** 2 * M * blk.alpha2 ** 2
            + N ** 2 * M * blk.alpha1 * blk.alpha3
            + M * N * np.einsum("ls,lk->ks", bB2 ** 2, bR2 ** 2))
    A = np.einsum("ks,ks,kt,kt->k", c, mean, c, mean) + np.einsum("ks,kst,kt->k", c, cov, c)
    return A + np.einsum("ks,ks->k", c ** 2, same)


# -- interference moment B_ki: named sub-terms ---------------------------------------

def interference_mean(blk):
    """E[h_ks^T h_is^*] = hbar_ks^T hbar_is^* + M * los_ip, shape (K, K, S)."""
    return np.einsum("ksm,ism->kis", blk.hbar, blk.hbar.conj()) + blk.M * blk.los_ip


def interference_los_scatter_cov(blk):
    """hbar_is^H W_kst hbar_it + hbar_ks^T W_ist^* hbar_kt^*, shape (K, K, S, S)."""
    t1 = np.einsum("ism,kstmp,itp->kist", blk.hbar.conj(), blk.W, blk.hbar)
    t2 = np.einsum("ksm,istmp,ktp->kist", blk.hbar, blk.W.conj(), blk.hbar.conj())
    return t1 + t2


def interference_ris_phase_cov(blk):
    """Mean-channel x LoS-aided scattering cross terms (all involve Theta)."""
    M = blk.M
    hc = blk.hbar.conj()
    p1 = np.einsum("ism,kistm->kist", hc, blk.Gam)
    p2 = np.einsum("itm,kitsm->kist", hc, blk.Gam).conj()
    q1 = np.einsum("ksm,ikstm->kist", hc, blk.Gam).conj()
    q2 = np.einsum("ktm,iktsm->kist", hc, blk.Gam)
    return M * (p1 + p2 + q1 + q2)


def interference_trace_cov(blk):
    """tr(W_kst W_its), shape (K, K, S, S)."""
    return np.einsum("kstmp,itspm->kist", blk.W, blk.W)


def interference_scatter_power_cov(blk):
    M, N = blk.M, blk.N
    aB2, bB2, aR2, bR2 = blk.aB ** 2, blk.bB ** 2, blk.aR ** 2, blk.bR ** 2
    bb = np.einsum("ls,lt->lst", bB2, bB2)
    ab = np.einsum("ls,lt->lst", aB2, bB2)
    ab = ab + ab.transpose(0, 2, 1)
    t = np.einsum("lst,li,lk->kist", bb, aR2, bR2) + np.einsum("lst,li,lk->kist", bb, bR2, aR2)
    t = t + np.einsum("lst,li,lk->kist", bb + ab, bR2, bR2)
    return M ** 2 * N * t


def interference_same_bs_excess(blk):
    """Same-BS (s = t) term, shape (K, K, S)."""
    M, N = blk.M, blk.N
    e2 = blk.hnorm2 + M * N * blk.alpha2
    return (e2[:, None, :] * blk.sig2[None, :, :] + e2[None, :, :] * blk.sig2[:, None, :]
            + M * blk.sig2[:, None, :] * blk.sig2[None, :, :])


def interference_moment(blk, eta):
    """B_ki with zero diagonal, shape (K, K)."""
    c = np.sqrt(_eta(eta))
    mean = interference_mean(blk)
    cov = (interference_los_scatter_cov(blk) + interference_ris_phase_cov(blk)
           + interference_trace_cov(blk) + interference_scatter_power_cov(blk))
    B = np.abs(np.einsum("is,kis->ki", c, mean)) ** 2
    B = B + np.einsum("is,kist,it->ki", c, cov, c).real
    B = B + np.einsum("is,kis->ki", c ** 2, interference_same_bs_excess(blk))
    return B * (1.0 - np.eye(blk.K))


# -- closed form --------------------------------------------------------------------

@dataclass
class ClosedFormTerms:
    A: np.ndarray        # (K,)
    B: np.ndarray        # (K, K), zero diagonal
    hbar: np.ndarray     # (K, S, M)
    signal_mean: np.ndarray  # (K, S) E||h_ks||^2

    @property
    def interference(self):
        return self.B.sum(axis=1)


def closed_form_terms(stats, phases: PhaseConfig, eta, variant="exact") -> ClosedFormTerms:
    blk = stats if isinstance(stats, StatisticalBlocks) else StatisticalBlocks(stats, phases)
    if variant == "exact":
        A = signal_moment(blk, eta)
    elif variant == "printed":
        A = signal_moment_as_printed(blk, eta)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return ClosedFormTerms(A, interference_moment(blk, eta), blk.hbar, signal_mean(blk))


def closed_form_rate(terms: ClosedFormTerms, config):
    """Per-user approximate ergodic rate log2(1 + A_k / (sum_i B_ki + N0))."""
    return np.log2(1.0 + terms.A / (terms.interference + config.N0))


def closed_form_wsr(stats, phases, eta):
    cfg = stats.config
    return float(closed_form_rate(closed_form_terms(stats, phases, eta), cfg) @ np.asarray(cfg.mu))


def statistical_equal_power(stats, phases):
    """eta_ks = P_max / (K E||h_ks||^2): equal average received power, a
    deterministic allocation usable inside statistical expressions."""
    blk = StatisticalBlocks(stats, phases)
    return PowerAllocation(stats.config.P_max / (stats.config.K * signal_mean(blk)))


# -- no line-of-sight special case ----------------------------------------------------

def nlos_terms(stats, eta):
    """Signal and interference moments when every Rician factor is zero."""
    if not stats.zero_k_factors:
        raise ValueError("nlos_rate requires all Rician K factors to be zero")
    cfg = stats.config
    M, N, K = cfg.M, cfg.N, cfg.K
    c = np.sqrt(_eta(eta))
    bB2, bR2 = stats.bs_ris.b ** 2, stats.ris_ue.b ** 2
    scat = stats.direct.b ** 2 + N * stats.alpha3          # (K, S)
    x = np.einsum("ls,lt,lk->kst", bB2, bB2, bR2 ** 2)
    y = np.einsum("ls,lk->ks", bB2 ** 2, bR2 ** 2)
    z = np.einsum("ls,lt,lk,li->kist", bB2, bB2, bR2, bR2)
    A = (np.einsum("ks,kt,kst->k", c, c, N * M ** 2 * x + M ** 2 * scat[:, :, None] * scat[:, None, :])
         + np.einsum("ks,ks->k", c ** 2, M * scat ** 2 + M * N * y))
    B = (M ** 2 * N * np.einsum("is,it,kist->ki", c, c, z)
         + M * np.einsum("is,ks,is->ki", c ** 2, scat, scat))
    return A, B * (1.0 - np.eye(K))


def nlos_rate(stats, eta, config=None):
    config = config or stats.config
    A, B = nlos_terms(stats, eta)
    return np.log2(1.0 + A / (B.sum(1) + config.N0))

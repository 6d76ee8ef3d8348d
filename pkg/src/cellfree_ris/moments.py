"""Moment identities for the decomposed effective channel, checked by Monte Carlo.

The random part of h_ks splits into four components
  x1 = b_d h~_d                                   (direct scattering)
  x2 = sum_l a_r,lk b_ls G~_ls^T Theta_l hbar_r,lk   (scattered BS->RIS, LoS RIS->user)
  x3 = sum_l b_r,lk a_ls Gbar_ls^T Theta_l h~_r,lk   (LoS BS->RIS, scattered RIS->user)
  x4 = sum_l b_r,lk b_ls G~_ls^T Theta_l h~_r,lk     (both scattered)
so that h_ks = hbar_ks + x1 + x2 + x3 + x4.  Each identity below pairs a
sample statistic of these components with its analytic expectation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import PhaseConfig, _cn
from .rate import StatisticalBlocks, _eta


@dataclass
class IdentityResult:
    name: str
    analytic: float
    empirical: float
    se: float

    @property
    def z(self):
        return (self.empirical - self.analytic) / self.se if self.se > 0 else 0.0


def sample_components(stats, phases: PhaseConfig, n, rng):
    """Draw n samples of (x1, x2, x3, x4), each of shape (n, K, S, M)."""
    L, S, N, M = stats.G_los.shape
    K = stats.hd_los.shape[0]
    aB, bB, aR, bR = stats.bs_ris.a, stats.bs_ris.b, stats.ris_ue.a, stats.ris_ue.b
    Gt = _cn(rng, (n, L, S, N, M))
    hrt = _cn(rng, (n, L, K, N))
    hdt = _cn(rng, (n, K, S, M))
    th = phases.theta
    x1 = stats.direct.b[None, :, :, None] * hdt
    v_los = th[:, None, :] * stats.hr_los                       # (L, K, N)
    v_sc = th[None, :, None, :] * hrt                             # (n, L, K, N)
    x2 = np.einsum("lk,ls,nlsjm,lkj->nksm", aR, bB, Gt, v_los)
    x3 = np.einsum("lk,ls,lsjm,nlkj->nksm", bR, aB, stats.G_los, v_sc)
    x4 = np.einsum("lk,ls,nlsjm,nlkj->nksm", bR, bB, Gt, v_sc)
    return x1, x2, x3, x4


def _sq(x):
    return np.einsum("...m,...m->...", x, x.conj()).real


def _bil(x, y):
    """x^T y^* over the antenna axis."""
    return np.einsum("...m,...m->...", x, y.conj())


def _pairs_kei(x_k, x_i, c):
    """|sum_s c_is x_ks^T x_is^*|^2 summed over ordered pairs i != k, per sample.

    x_k, x_i: (n, K, S, M) components for the 'k' and 'i' side."""
    K = x_k.shape[1]
    cross = np.einsum("nksm,nism,is->nki", x_k, x_i.conj(), c)
    return (np.abs(cross) ** 2 * (1 - np.eye(K))).sum((1, 2))


def _same_bs_kei(x_k, x_i, w):
    """sum_s w_is |x_ks^T x_is^*|^2 over i != k, per sample."""
    K = x_k.shape[1]
    cross = np.abs(np.einsum("nksm,nism->nkis", x_k, x_i.conj())) ** 2
    return np.einsum("nkis,is,ki->n", cross, w, 1 - np.eye(K))


def identity_samples(stats, phases, eta, x):
    """Per-sample left-hand sides, keyed by identity name."""
    x1, x2, x3, x4 = x
    c = np.sqrt(eta)
    w = eta
    K, S = eta.shape
    off_bs = 1.0 - np.eye(S)
    hb = StatisticalBlocks(stats, phases).hbar
    out = {}
    out["norm2_direct_scatter"] = _sq(x1).sum((1, 2))
    out["norm2_bs_scatter"] = _sq(x2).sum((1, 2))
    out["norm2_ris_scatter"] = _sq(x3).sum((1, 2))
    out["norm2_double_scatter"] = _sq(x4).sum((1, 2))
    # |sum_s c_ks x2_ks^H x4_ks|^2 summed over users
    g = np.einsum("ks,nksm,nksm->nk", c, x2.conj(), x4)
    out["bs_double_scatter_quartic"] = (np.abs(g) ** 2).sum(1)
    n3, n4 = _sq(x3), _sq(x4)
    out["ris_scatter_cross_bs"] = np.einsum("ks,kt,st,nks,nkt->n", c, c, off_bs, n3, n3)
    out["double_scatter_cross_bs"] = np.einsum("ks,kt,st,nks,nkt->n", c, c, off_bs, n4, n4)
    out["fourth_moments"] = np.einsum("ks,nks->n", w, _sq(x1) ** 2 + _sq(x2) ** 2 + n3 ** 2 + n4 ** 2)
    out["bs_double_scatter_inner"] = np.einsum("ks,nks->n", w, np.abs(_bil(x4, x2)) ** 2)
    out["ris_double_scatter_inner"] = np.einsum("ks,nks->n", w, np.abs(_bil(x4, x3)) ** 2)
    out["interference_bs_scatter"] = _pairs_kei(x2, x2, c)
    out["interference_double_scatter"] = (_pairs_kei(x4, x4, c) + _pairs_kei(x4, x2, c)
                                          + _pairs_kei(x2, x4, c))
    hbn = np.broadcast_to(hb, x1.shape)
    mixed = 0.0
    for xn in (x1, x2, x4):
        mixed = mixed + _same_bs_kei(hbn, xn, w) + _same_bs_kei(xn, hbn, w)
    mixed = mixed + _same_bs_kei(x1, x1, w)
    for xn in (x2, x3, x4):
        mixed = mixed + _same_bs_kei(x1, xn, w) + _same_bs_kei(xn, x1, w)
    for xa, xb in ((x3, x2), (x2, x3), (x3, x4), (x4, x3)):
        mixed = mixed + _same_bs_kei(xa, xb, w)
    out["interference_mixed_same_bs"] = mixed
    return out


def identity_values(stats, phases, eta):
    """Analytic expectations of the statistics in identity_samples."""
    cfg = stats.config
    M, N, K, S = cfg.M, cfg.N, cfg.K, cfg.S
    c = np.sqrt(eta)
    w = eta
    aB2, bB2 = stats.bs_ris.a ** 2, stats.bs_ris.b ** 2
    aR2, bR2 = stats.ris_ue.a ** 2, stats.ris_ue.b ** 2
    bD2 = stats.direct.b ** 2
    a1, a2, a3 = stats.alpha1, stats.alpha2, stats.alpha3
    off_bs = 1.0 - np.eye(S)
    off_u = 1.0 - np.eye(K)
    blk = StatisticalBlocks(stats, phases)
    out = {}
    out["norm2_direct_scatter"] = M * bD2.sum()
    out["norm2_bs_scatter"] = M * N * a1.sum()
    out["norm2_ris_scatter"] = M * N * a2.sum()
    out["norm2_double_scatter"] = M * N * a3.sum()

    # BS-side quartic of the scattered-BS components
    cross_bs = M ** 2 * N * np.einsum("ks,kt,st,lk,ls,lt->", c, c, off_bs, aR2 * bR2, bB2, bB2)
    l_ne_m = N ** 2 * M * (np.einsum("ks,lk,ls,mk,ms->", w, aR2, bB2, bR2, bB2)
                           - np.einsum("ks,lk,ls,lk,ls->", w, aR2, bB2, bR2, bB2))
    same_l = M * N * (M + N) * np.einsum("ks,lk,ls->", w, aR2 * bR2, bB2 ** 2)
    out["bs_double_scatter_quartic"] = cross_bs + l_ne_m + same_l

    trace = np.einsum("kstmp,kstmp->kst", blk.W, blk.W.conj()).real
    out["ris_scatter_cross_bs"] = np.einsum("ks,kt,st,kst->", c, c, off_bs,
                                            trace + M ** 2 * N ** 2 * a2[:, :, None] * a2[:, None, :])
    out["double_scatter_cross_bs"] = np.einsum(
        "ks,kt,st,kst->", c, c, off_bs,
        M ** 2 * N ** 2 * a3[:, :, None] * a3[:, None, :]
        + M ** 2 * N * np.einsum("lk,ls,lt->kst", bR2 ** 2, bB2, bB2))

    # fourth moments: the RIS-scatter term is tr(P_l P_m) with the M x M Grams
    # P_l = Gbar_ls^T Gbar_ls^*, i.e. ||Gbar_ls^* Gbar_ms^T||_F^2
    P = np.einsum("lsjm,lsjp->lsmp", stats.G_los, stats.G_los.conj())
    fro = np.einsum("lsab,msba->lms", P, P).real
    ris4 = np.einsum("ls,lk,ms,mk,lms->ks", aB2, bR2, aB2, bR2, fro)
    fourth = ((M ** 2 + M) * (bD2 ** 2 + N ** 2 * (a1 ** 2 + a2 ** 2 + a3 ** 2))
              - N ** 2 * M * a2 ** 2 + ris4
              + N * (M ** 2 + M) * np.einsum("ls,lk->ks", bB2 ** 2, bR2 ** 2))
    out["fourth_moments"] = (w * fourth).sum()
    out["bs_double_scatter_inner"] = (w * (N ** 2 * M * a1 * a3
                                           + M ** 2 * N * np.einsum("lk,ls->ks", aR2 * bR2, bB2 ** 2))).sum()
    out["ris_double_scatter_inner"] = (w * (N ** 2 * M * a2 * a3
                                            + M * N * np.einsum("lk,ls->ks", bR2 ** 2, aB2 * bB2))).sum()

    ip = np.einsum("lkj,lij->lki", stats.hr_los, stats.hr_los.conj())          # hbar_r,lk^T hbar_r,li^*
    aR = stats.ris_ue.a
    q = np.einsum("is,ls,lk,li,lki->ki", c, bB2, aR, aR, ip)                   # sum_s c_is sum_l (...)
    out["interference_bs_scatter"] = (M ** 2 * np.abs(q) ** 2 * off_u).sum() + \
        N ** 2 * M * np.einsum("is,ks,is,ki->", w, a1, a1, off_u)
    cs = np.einsum("is,ls->il", c, bB2)                                         # sum_s c_is b_ls^2
    mix = bR2[:, :, None] * bR2[:, None, :] + aR2[:, None, :] * bR2[:, :, None] + \
        aR2[:, :, None] * bR2[:, None, :]                                       # (l, k, i)
    out["interference_double_scatter"] = (
        M ** 2 * N * np.einsum("il,il,lki,ki->", cs, cs, mix, off_u)
        + N ** 2 * M * np.einsum("is,ki,ks,is->", w, off_u, a3, a3)
        + N ** 2 * M * np.einsum("is,ki,ks,is->", w, off_u, a3, a1)
        + N ** 2 * M * np.einsum("is,ki,ks,is->", w, off_u, a1, a3))
    hn = blk.hnorm2
    tot = a1 + a2 + a3
    per = (hn[:, None, :] * (bD2 + N * a1 + N * a3)[None, :, :]
           + hn[None, :, :] * (bD2 + N * a1 + N * a3)[:, None, :]
           + M * bD2[:, None, :] * bD2[None, :, :]
           + M * N * bD2[:, None, :] * tot[None, :, :]
           + M * N * bD2[None, :, :] * tot[:, None, :]
           + N ** 2 * M * (a1[:, None, :] * a2[None, :, :] + a2[:, None, :] * a1[None, :, :]
                           + a2[:, None, :] * a3[None, :, :] + a3[:, None, :] * a2[None, :, :]))
    out["interference_mixed_same_bs"] = np.einsum("is,kis,ki->", w, per, off_u)
    return {k: float(v) for k, v in out.items()}


IDENTITY_NAMES = (
    "norm2_direct_scatter", "norm2_bs_scatter", "norm2_ris_scatter", "norm2_double_scatter",
    "bs_double_scatter_quartic", "ris_scatter_cross_bs", "double_scatter_cross_bs",
    "fourth_moments", "bs_double_scatter_inner", "ris_double_scatter_inner",
    "interference_bs_scatter", "interference_double_scatter", "interference_mixed_same_bs",
)


def moment_oracle(stats, phases, n_samples=10_000, seed=None, eta=None, chunk=2000):
    """Table of (identity, analytic, empirical, standard error)."""
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    cfg = stats.config
    eta = np.ones((cfg.K, cfg.S)) if eta is None else _eta(eta)
    rng = np.random.default_rng(seed)
    acc = {name: [] for name in IDENTITY_NAMES}
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        vals = identity_samples(stats, phases, eta, sample_components(stats, phases, m, rng))
        for name in IDENTITY_NAMES:
            acc[name].append(vals[name])
        done += m
    analytic = identity_values(stats, phases, eta)
    rows = []
    for name in IDENTITY_NAMES:
        v = np.concatenate(acc[name])
        rows.append(IdentityResult(name, analytic[name], float(v.mean()),
                                   float(v.std(ddof=1) / np.sqrt(len(v)))))
    return rows


def write_oracle_csv(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["identity", "analytic", "empirical", "se", "z_score"])
        for r in rows:
            wr.writerow([r.name, f"{r.analytic:.10g}", f"{r.empirical:.10g}", f"{r.se:.6g}", f"{r.z:.4f}"])

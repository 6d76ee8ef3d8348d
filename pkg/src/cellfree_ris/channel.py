"""Array responses, Rician small-scale sampling, effective channels and MR precoding.

Index conventions used throughout the package:
  G[l, s]   BS s -> RIS l channel, shape (N, M)
  hr[l, k]  RIS l -> user k channel, shape (N,)
  hd[k, s]  BS s -> user k direct channel, shape (M,)
  h[k, s]   effective channel, h_ks = sum_l G_ls^T diag(u_l) hr_lk + hd_ks
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def steering_ula(M, theta, spacing_over_lambda=0.5):
    """Uniform linear array response; entry m is exp(j 2pi d m sin(theta))."""
    m = np.arange(M)
    return np.exp(2j * np.pi * spacing_over_lambda * m * np.sin(theta))


def steering_upa(N_r, N_c, theta, phi, spacing_over_lambda=0.5):
    """Planar array response, row-major stacking (row index outer, column inner).

    Entry (n_r, n_c) is exp(j 2pi d (n_r cos(theta) sin(phi) + n_c sin(theta) sin(phi))).
    """
    nr, nc = np.meshgrid(np.arange(N_r), np.arange(N_c), indexing="ij")
    phase = nr * np.cos(theta) * np.sin(phi) + nc * np.sin(theta) * np.sin(phi)
    return np.exp(2j * np.pi * spacing_over_lambda * phase).ravel()


def project_unit_modulus(v):
    """Elementwise v/|v|, with exact zeros mapped to 1."""
    v = np.asarray(v, dtype=complex)
    # exp(j angle) rather than v/|v|: division overflows for subnormal entries
    return np.where(v != 0, np.exp(1j * np.angle(v)), 1.0 + 0j)


class PhaseConfig:
    """Stacked RIS reflection coefficients u = [diag(Theta_1); ...; diag(Theta_L)]."""

    def __init__(self, u, L, N):
        u = project_unit_modulus(np.asarray(u).ravel())
        if u.size != L * N:
            raise ValueError(f"phase vector has {u.size} entries, expected L*N={L * N}")
        self.u = u
        self.L, self.N = L, N
        self.u.setflags(write=False)

    @classmethod
    def random(cls, L, N, seed=None):
        rng = np.random.default_rng(seed)
        return cls(np.exp(2j * np.pi * rng.random(L * N)), L, N)

    @classmethod
    def identity(cls, L, N):
        return cls(np.ones(L * N), L, N)

    @property
    def theta(self):
        """Per-RIS diagonals, shape (L, N)."""
        return self.u.reshape(self.L, self.N)

    def Theta(self, l):
        return np.diag(self.theta[l])

    @property
    def Phi(self):
        return np.diag(self.u)

    def __repr__(self):
        return f"PhaseConfig(L={self.L}, N={self.N})"


@dataclass
class ChannelRealization:
    """One draw of all small-scale channels (optionally a batch along axis 0)."""

    G: np.ndarray    # (L, S, N, M)  or (n, L, S, N, M)
    hr: np.ndarray   # (L, K, N)     or (n, L, K, N)
    hd: np.ndarray   # (K, S, M)     or (n, K, S, M)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def batched(self):
        return self.hd.ndim == 4

    def effective(self, phases: PhaseConfig):
        key = phases.u.tobytes()
        if key not in self._cache:
            self._cache.clear()
            self._cache[key] = effective_channel(self, phases)
        return self._cache[key]


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_channels(stats, seed=None, n=None) -> ChannelRealization:
    """Draw Rician channels: a * LoS + b * CN(0, 1) per entry.

    ``seed`` may be an int, a SeedSequence or a Generator.  With ``n`` given,
    a batch of n independent realizations is stacked along a leading axis.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lead = () if n is None else (n,)
    br, ru, dr = stats.bs_ris, stats.ris_ue, stats.direct
    L, S, N, M = stats.G_los.shape
    K = stats.hd_los.shape[0]
    G = br.a[:, :, None, None] * stats.G_los + br.b[:, :, None, None] * _cn(rng, lead + (L, S, N, M))
    hr = ru.a[:, :, None] * stats.hr_los + ru.b[:, :, None] * _cn(rng, lead + (L, K, N))
    hd = dr.a[:, :, None] * stats.hd_los + dr.b[:, :, None] * _cn(rng, lead + (K, S, M))
    return ChannelRealization(G, hr, hd)


def effective_channel(real: ChannelRealization, phases: PhaseConfig):
    """h[..., k, s, :] = sum_l G_ls^T Theta_l hr_lk + hd_ks."""
    L, S, N, M = real.G.shape[-4:]
    if phases.L != L or phases.N != N:
        raise ValueError("phase configuration does not match the realization dimensions")
    if L == 0:
        return real.hd.copy()
    weighted = real.hr * phases.theta[:, None, :]
    return np.einsum("...lkn,...lsnm->...ksm", weighted, real.G) + real.hd


@dataclass
class PowerAllocation:
    """Power-control coefficients eta[k, s] >= 0."""

    eta: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if np.any(self.eta < 0):
            raise ValueError("power coefficients must be nonnegative")

    def bs_power(self, h):
        """Per-BS transmit power sum_k eta_ks ||h_ks||^2, shape (S,)."""
        return np.einsum("ks,ks->s", self.eta, channel_gain(h))

    def violation(self, h, P_max):
        """Largest relative excess over the per-BS budget (<= 0 when feasible)."""
        return float(np.max(self.bs_power(h) / P_max - 1.0))

    def is_feasible(self, h, P_max, rtol=1e-6):
        return self.violation(h, P_max) <= rtol


def channel_gain(h):
    """||h_ks||^2 over the antenna axis."""
    return np.einsum("...m,...m->...", h, h.conj()).real


def mr_precoder(h, eta):
    """Maximum-ratio precoders w_ks = sqrt(eta_ks) conj(h_ks)."""
    eta = eta.eta if isinstance(eta, PowerAllocation) else np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise ValueError("power coefficients must be nonnegative")
    return np.sqrt(eta)[..., None] * h.conj()


def dump_realization(real: ChannelRealization, path):
    """Write a realization as CSV: one block per array with a dimensions header,
    then row-major (real, imag) pairs."""
    with open(path, "w") as fh:
        for name in ("G", "hr", "hd"):
            arr = getattr(real, name)
            fh.write(f"# {name} " + " ".join(str(d) for d in arr.shape) + "\n")
            for z in arr.ravel():
                fh.write(f"{z.real:.17g},{z.imag:.17g}\n")


def load_realization(path) -> ChannelRealization:
    arrays, name, shape, vals = {}, None, None, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                if name is not None:
                    arrays[name] = np.array(vals, dtype=complex).reshape(shape)
                parts = line[1:].split()
                name, shape, vals = parts[0], tuple(int(p) for p in parts[1:]), []
            elif line.strip():
                re, im = line.split(",")
                vals.append(complex(float(re), float(im)))
    arrays[name] = np.array(vals, dtype=complex).reshape(shape)
    return ChannelRealization(arrays["G"], arrays["hr"], arrays["hd"])

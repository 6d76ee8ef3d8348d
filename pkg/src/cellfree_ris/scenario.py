"""Scenario construction: system parameters, node placement, path loss and
the statistical CSI (Rician splits, LoS components, per-(user, BS) aggregates).
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import steering_ula, steering_upa


def dbm_to_watt(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """All scalar parameters of a scenario. Powers are stored in watts."""

    S: int = 3
    M: int = 4
    L: int = 3
    N_r: int = 8
    N_c: int = 8
    K: int = 4
    P_max: float = 0.01
    N0: float = 1e-11
    mu: tuple | float = 1.0   # scalar weights are broadcast to all K users
    C0: float = 1e-3
    alpha_D: float = 3.5
    alpha_BR: float = 2.2
    alpha_RU: float = 2.8
    K_bs_ris: float = 3 + np.sqrt(12)
    K_ris_ue: float = 3 + np.sqrt(12)
    K_direct: float = 3 + np.sqrt(12)
    d1_over_lambda: float = 0.5
    d2_over_lambda: float = 0.5
    area_side: float = 100.0
    h_bs: float = 10.0
    h_ris: float = 5.0
    h_ue: float = 1.5
    angle_mode: str = "geometric"  # or "random"

    def __post_init__(self):
        mu = tuple(float(m) for m in np.broadcast_to(self.mu, (self.K,))) if np.ndim(self.mu) == 0 \
            else tuple(float(m) for m in self.mu)
        object.__setattr__(self, "mu", mu)
        if min(self.S, self.M, self.N_r, self.N_c, self.K) < 1 or self.L < 0:
            raise ValueError("counts must be >= 1 (L >= 0)")
        if len(self.mu) != self.K:
            raise ValueError(f"mu has {len(self.mu)} entries, expected K={self.K}")
        if min(self.mu) <= 0:
            raise ValueError("user weights must be positive")
        if self.P_max <= 0 or self.N0 <= 0 or self.C0 <= 0:
            raise ValueError("P_max, N0 and C0 must be positive")
        if min(self.alpha_D, self.alpha_BR, self.alpha_RU) <= 0:
            raise ValueError("path-loss exponents must be positive")
        if min(self.K_bs_ris, self.K_ris_ue, self.K_direct) < 0:
            raise ValueError("Rician K factors must be >= 0")
        if self.angle_mode not in ("geometric", "random"):
            raise ValueError(f"unknown angle_mode {self.angle_mode!r}")

    @property
    def N(self) -> int:
        return self.N_r * self.N_c

    def replace(self, **changes) -> "SystemConfig":
        if "K" in changes and "mu" not in changes:
            changes["mu"] = (1.0,) * changes["K"]
        if "N" in changes:
            n = changes.pop("N")
            changes.setdefault("N_r", 1)
            changes.setdefault("N_c", n // changes["N_r"])
        return dataclasses.replace(self, **changes)

    def with_k_factors(self, k) -> "SystemConfig":
        return self.replace(K_bs_ris=k, K_ris_ue=k, K_direct=k)


def default_config() -> SystemConfig:
    """Reference deployment: 3 BSs x 4 antennas, 3 RISs of 8x8 elements, 4 users."""
    return SystemConfig()


# -- config files -----------------------------------------------------------
# Flat ``key = value`` lines, ``#`` comments.  Keys are SystemConfig field
# names; P_max and N0 are given in dBm, C0 in dB, mu as a comma list.

_DBM_KEYS = ("P_max", "N0")
_DB_KEYS = ("C0",)


def parse_config_text(text: str, base: SystemConfig | None = None) -> SystemConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string("[scenario]\n" + text)
    base = base or default_config()
    fields = {f.name: f for f in dataclasses.fields(SystemConfig)}
    changes = {}
    for key, raw in parser["scenario"].items():
        if key == "N":
            changes["N"] = int(raw)
            continue
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        default = getattr(base, key)
        if key in _DBM_KEYS:
            changes[key] = float(dbm_to_watt(float(raw)))
        elif key in _DB_KEYS:
            changes[key] = float(db_to_linear(float(raw)))
        elif key == "mu":
            changes[key] = tuple(float(v) for v in raw.split(","))
        elif isinstance(default, bool):
            changes[key] = raw.strip().lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            changes[key] = int(raw)
        elif isinstance(default, float):
            changes[key] = float(raw)
        else:
            changes[key] = raw.strip()
    if "K" in changes and "mu" not in changes:
        changes["mu"] = (1.0,) * changes["K"]
    return base.replace(**changes)


def load_config(path) -> SystemConfig:
    return parse_config_text(Path(path).read_text())


# -- geometry -----------------------------------------------------------------

@dataclass(frozen=True)
class LayoutSpec:
    """How to place nodes.

    kind: "uniform-random" | "fixed" | "ue-cluster".  Fixed layouts take
    explicit planar coordinates; any class left as None is drawn uniformly.
    "ue-cluster" puts users at (x+-2, y+-2) around ``cluster_center``.
    """

    kind: str = "uniform-random"
    bs_xy: tuple | None = None
    ris_xy: tuple | None = None
    ue_xy: tuple | None = None
    cluster_center: tuple | None = None


@dataclass(frozen=True)
class NetworkGeometry:
    bs_positions: np.ndarray   # (S, 3)
    ris_positions: np.ndarray  # (L, 3)
    ue_positions: np.ndarray   # (K, 3)


def _check_xy(xy, n, side, what):
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if len(xy) != n:
        raise ValueError(f"{what}: expected {n} coordinates, got {len(xy)}")
    if np.any(xy < 0) or np.any(xy > side):
        raise ValueError(f"{what}: coordinates outside the [0, {side}]^2 deployment square")
    return xy


def place_nodes(config: SystemConfig, layout: LayoutSpec | None = None, seed=0) -> NetworkGeometry:
    layout = layout or LayoutSpec()
    if layout.kind not in ("uniform-random", "fixed", "ue-cluster"):
        raise ValueError(f"unknown layout kind {layout.kind!r}")
    rng = np.random.default_rng(seed)
    side = config.area_side

    def planar(given, n, what):
        if given is not None and layout.kind != "uniform-random":
            return _check_xy(given, n, side, what)
        return rng.uniform(0.0, side, size=(n, 2))

    bs = planar(layout.bs_xy, config.S, "BS")
    ris = planar(layout.ris_xy, config.L, "RIS") if config.L else np.zeros((0, 2))
    if layout.kind == "ue-cluster":
        if layout.cluster_center is None:
            raise ValueError("ue-cluster layout needs cluster_center")
        cx, cy = layout.cluster_center
        corners = np.array([[cx - 2, cy - 2], [cx - 2, cy + 2], [cx + 2, cy - 2], [cx + 2, cy + 2]])
        extra = rng.uniform(-2, 2, size=(max(config.K - 4, 0), 2)) + [cx, cy]
        ue = _check_xy(np.vstack([corners, extra])[: config.K], config.K, side, "UE")
    else:
        ue = planar(layout.ue_xy, config.K, "UE")

    def lift(xy, h):
        return np.column_stack([xy, np.full(len(xy), h)])

    geom = NetworkGeometry(lift(bs, config.h_bs), lift(ris, config.h_ris), lift(ue, config.h_ue))
    allpos = np.vstack([geom.bs_positions, geom.ris_positions, geom.ue_positions])
    d = np.linalg.norm(allpos[:, None] - allpos[None], axis=-1)
    if np.any(d[np.triu_indices(len(allpos), 1)] <= 0):
        raise ValueError("two nodes coincide")
    return geom


def path_loss(d, alpha, C0):
    """Large-scale gain C0 * d^-alpha (reference distance 1 m)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return C0 * d ** (-alpha)


# -- statistical CSI ------------------------------------------------------------

@dataclass(frozen=True)
class LinkStatistics:
    beta: np.ndarray
    K: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_beta(cls, beta, kfac):
        beta = np.asarray(beta, dtype=float)
        kfac = np.broadcast_to(np.asarray(kfac, dtype=float), beta.shape).copy()
        a = np.sqrt(beta * kfac / (kfac + 1.0))
        b = np.sqrt(beta / (kfac + 1.0))
        return cls(beta, kfac, a, b)


@dataclass(frozen=True)
class StatisticalCsi:
    """Frame-level channel knowledge.

    Array layout: BS->RIS links indexed [l, s]; RIS->user [l, k];
    direct [k, s].  LoS: G_los (L, S, N, M), hr_los (L, K, N), hd_los (K, S, M).
    """

    config: SystemConfig
    bs_ris: LinkStatistics
    ris_ue: LinkStatistics
    direct: LinkStatistics
    G_los: np.ndarray
    hr_los: np.ndarray
    hd_los: np.ndarray

    @property
    def S(self):
        return self.config.S

    @property
    def M(self):
        return self.config.M

    @property
    def L(self):
        return self.config.L

    @property
    def N(self):
        return self.config.N

    @property
    def K(self):
        return self.config.K

    # Aggregates, shape (K, S).
    @property
    def alpha1(self):
        return np.einsum("ls,lk->ks", self.bs_ris.b ** 2, self.ris_ue.a ** 2)

    @property
    def alpha2(self):
        return np.einsum("ls,lk->ks", self.bs_ris.a ** 2, self.ris_ue.b ** 2)

    @property
    def alpha3(self):
        return np.einsum("ls,lk->ks", self.bs_ris.b ** 2, self.ris_ue.b ** 2)

    @property
    def chi(self):
        return self.direct.b ** 2 + self.N * (self.alpha1 + self.alpha2 + self.alpha3)

    @property
    def zero_k_factors(self) -> bool:
        return not (np.any(self.bs_ris.K) or np.any(self.ris_ue.K) or np.any(self.direct.K))


def _azimuth_polar(vec):
    vec = np.asarray(vec, dtype=float)
    az = np.arctan2(vec[..., 1], vec[..., 0])
    polar = np.arccos(np.clip(vec[..., 2] / np.linalg.norm(vec, axis=-1), -1, 1))
    return az, polar


def build_statistics(config: SystemConfig, geom: NetworkGeometry, seed=None) -> StatisticalCsi:
    """Path loss, Rician splits and LoS components from the geometry.

    Geometric angles: the BS array response uses the azimuth of the departure
    direction only; RIS responses use azimuth and polar angle of the arrival
    direction.  ``angle_mode="random"`` draws the angles uniformly instead
    (needs ``seed``).
    """
    S, L, K, M = config.S, config.L, config.K, config.M
    if (len(geom.bs_positions), len(geom.ris_positions), len(geom.ue_positions)) != (S, L, K):
        raise ValueError("geometry does not match the configuration counts")
    bs, ris, ue = geom.bs_positions, geom.ris_positions, geom.ue_positions

    d_br = np.linalg.norm(ris[:, None] - bs[None], axis=-1)   # (L, S)
    d_ru = np.linalg.norm(ris[:, None] - ue[None], axis=-1)   # (L, K)
    d_d = np.linalg.norm(ue[:, None] - bs[None], axis=-1)     # (K, S)
    bs_ris = LinkStatistics.from_beta(path_loss(d_br, config.alpha_BR, config.C0), config.K_bs_ris)
    ris_ue = LinkStatistics.from_beta(path_loss(d_ru, config.alpha_RU, config.C0), config.K_ris_ue)
    direct = LinkStatistics.from_beta(path_loss(d_d, config.alpha_D, config.C0), config.K_direct)

    if config.angle_mode == "geometric":
        aod_br, _ = _azimuth_polar(ris[:, None] - bs[None])        # departure from BS s toward RIS l
        aoa_br, pol_br = _azimuth_polar(bs[None] - ris[:, None])   # arrival at RIS l from BS s
        aoa_ru, pol_ru = _azimuth_polar(ue[None] - ris[:, None])   # RIS l <-> user k
        aoa_d, _ = _azimuth_polar(ue[:, None] - bs[None])          # BS s <-> user k
    else:
        rng = np.random.default_rng(seed)
        aod_br = rng.uniform(-np.pi, np.pi, (L, S))
        aoa_br, pol_br = rng.uniform(-np.pi, np.pi, (L, S)), rng.uniform(0, np.pi, (L, S))
        aoa_ru, pol_ru = rng.uniform(-np.pi, np.pi, (L, K)), rng.uniform(0, np.pi, (L, K))
        aoa_d = rng.uniform(-np.pi, np.pi, (K, S))

    d1, d2 = config.d1_over_lambda, config.d2_over_lambda
    N = config.N
    G_los = np.empty((L, S, N, M), dtype=complex)
    hr_los = np.empty((L, K, N), dtype=complex)
    hd_los = np.empty((K, S, M), dtype=complex)
    for l in range(L):
        for s in range(S):
            G_los[l, s] = np.outer(steering_upa(config.N_r, config.N_c, aoa_br[l, s], pol_br[l, s], d2),
                                   steering_ula(M, aod_br[l, s], d1))
        for k in range(K):
            hr_los[l, k] = steering_upa(config.N_r, config.N_c, aoa_ru[l, k], pol_ru[l, k], d2)
    for k in range(K):
        for s in range(S):
            hd_los[k, s] = steering_ula(M, aoa_d[k, s], d1)
    return StatisticalCsi(config, bs_ris, ris_ue, direct, G_los, hr_los, hd_los)


def random_statistics(config: SystemConfig, seed=0, beta_range=(0.2, 1.0)) -> StatisticalCsi:
    """Small synthetic instance with O(1) gains and random LoS phases.

    Not a physical deployment: used by tests and the moment suite, where
    unit-scale gains keep every term of the closed form visible.
    """
    rng = np.random.default_rng(seed)
    S, L, K, M, N = config.S, config.L, config.K, config.M, config.N

    def beta(shape):
        return rng.uniform(*beta_range, size=shape)

    def unit(shape):
        return np.exp(2j * np.pi * rng.random(shape))

    return StatisticalCsi(
        config,
        LinkStatistics.from_beta(beta((L, S)), config.K_bs_ris),
        LinkStatistics.from_beta(beta((L, K)), config.K_ris_ue),
        LinkStatistics.from_beta(beta((K, S)), config.K_direct),
        unit((L, S, N, M)), unit((L, K, N)), unit((K, S, M)),
    )


def scaled_statistics(stats: StatisticalCsi, direct_scale=1.0, bs_ris_scale=1.0, ris_ue_scale=1.0):
    """Copy with path-loss coefficients multiplied per link class."""
    def scale(ls, c):
        return LinkStatistics.from_beta(ls.beta * c, ls.K)
    return dataclasses.replace(stats, bs_ris=scale(stats.bs_ris, bs_ris_scale),
                               ris_ue=scale(stats.ris_ue, ris_ue_scale),
                               direct=scale(stats.direct, direct_scale))

import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cellfree_ris.channel import (ChannelRealization, PhaseConfig, PowerAllocation, dump_realization,
                                  effective_channel, load_realization, mr_precoder, project_unit_modulus,
                                  sample_channels, steering_ula, steering_upa)
from cellfree_ris.scenario import LinkStatistics, random_statistics
from conftest import small_config


# -- steering vectors ----------------------------------------------------------------------

def test_ula_broadside():
    np.testing.assert_allclose(steering_ula(4, 0.0, 0.5), np.ones(4))


def test_ula_endfire_half_wavelength():
    np.testing.assert_allclose(steering_ula(2, np.pi / 2, 0.5), [1, -1], atol=1e-15)


def test_ula_quarter_turn_steps():
    np.testing.assert_allclose(steering_ula(4, np.pi / 6, 0.5), [1, 1j, -1, -1j], atol=1e-15)


def test_upa_zero_polar_is_all_ones():
    np.testing.assert_allclose(steering_upa(3, 5, 0.7, 0.0, 0.5), np.ones(15))


def test_upa_two_rows():
    np.testing.assert_allclose(steering_upa(2, 1, 0.0, np.pi / 2, 0.5), [1, -1], atol=1e-15)


def test_upa_row_major_against_scalar_loop():
    th, ph = np.pi / 4, np.pi / 2
    got = steering_upa(2, 2, th, ph, 0.5)
    want = [np.exp(2j * np.pi * 0.5 * (nr * np.cos(th) * np.sin(ph) + nc * np.sin(th) * np.sin(ph)))
            for nr in range(2) for nc in range(2)]
    np.testing.assert_allclose(got, want, atol=1e-15)
    np.testing.assert_allclose(got, [np.exp(1j * np.pi * (nr + nc) / np.sqrt(2))
                                     for nr in range(2) for nc in range(2)], atol=1e-14)


@given(st.integers(1, 8), st.integers(1, 8), st.floats(-np.pi, np.pi), st.floats(0, np.pi),
       st.floats(0.1, 2.0))
def test_steering_unit_modulus(nr, nc, th, ph, d):
    for v in (steering_ula(nr * nc, th, d), steering_upa(nr, nc, th, ph, d)):
        np.testing.assert_allclose(np.abs(v), 1.0, atol=1e-12)
        assert v[0] == 1.0


# -- phases ---------------------------------------------------------------------------------

@given(arrays(complex, 6, elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False,
                                                        allow_infinity=False)))
def test_phase_projection(v):
    u = PhaseConfig(v, 2, 3).u
    np.testing.assert_allclose(np.abs(u), 1.0, atol=1e-9)
    nz = np.abs(v) > 1e-300
    np.testing.assert_allclose(np.angle(u[nz] * np.conj(v[nz])), 0.0, atol=1e-9)


def test_zero_projects_to_one():
    assert project_unit_modulus(np.zeros(2))[0] == 1.0


def test_subnormal_projects_to_unit_modulus():
    u = project_unit_modulus(np.array([2.2e-309, -1e-320j]))
    np.testing.assert_allclose(u, [1.0, -1j], atol=1e-12)


def test_phase_views():
    p = PhaseConfig.random(2, 3, seed=0)
    np.testing.assert_array_equal(np.diag(p.Phi), p.u)
    np.testing.assert_array_equal(np.diag(p.Theta(1)), p.u[3:])
    with pytest.raises(ValueError):
        PhaseConfig(np.ones(5), 2, 3)


# -- sampling -----------------------------------------------------------------------------------

def test_sampling_deterministic():
    stats = random_statistics(small_config(), seed=1)
    r1, r2 = sample_channels(stats, 9), sample_channels(stats, 9)
    np.testing.assert_array_equal(r1.G, r2.G)
    np.testing.assert_array_equal(r1.hd, r2.hd)


def test_deterministic_limit():
    stats = random_statistics(small_config(), seed=1)

    def los_only(ls):
        return LinkStatistics(ls.beta, ls.K, ls.a, np.zeros_like(ls.b))
    stats = dataclasses.replace(stats, bs_ris=los_only(stats.bs_ris), ris_ue=los_only(stats.ris_ue),
                                direct=los_only(stats.direct))
    r = sample_channels(stats, 0)
    np.testing.assert_array_equal(r.G, stats.bs_ris.a[:, :, None, None] * stats.G_los)
    np.testing.assert_array_equal(r.hd, stats.direct.a[:, :, None] * stats.hd_los)


def test_sample_mean_and_variance():
    stats = random_statistics(small_config(), seed=2)
    n = 10_000
    r = sample_channels(stats, 4, n=n)
    mean = r.G.mean(0)
    target = stats.bs_ris.a[:, :, None, None] * stats.G_los
    b2 = (stats.bs_ris.b ** 2)[:, :, None, None]
    se = np.sqrt(b2 / n)
    assert np.all(np.abs(mean - target) <= 4 * np.sqrt(2) * se)   # 4 sigma on |complex error|
    var = np.mean(np.abs(r.G - target) ** 2, axis=0)
    np.testing.assert_allclose(var, np.broadcast_to(b2, var.shape), rtol=0.1)


# -- effective channel ------------------------------------------------------------------------

def test_effective_without_ris():
    stats = random_statistics(small_config(L=0), seed=0)
    r = sample_channels(stats, 0)
    np.testing.assert_array_equal(effective_channel(r, PhaseConfig(np.ones(0), 0, 4)), r.hd)


def test_effective_single_ris_identity():
    stats = random_statistics(small_config(L=1), seed=0)
    r = sample_channels(stats, 0)
    h = effective_channel(r, PhaseConfig.identity(1, 4))
    want = np.einsum("kn,snm->ksm", r.hr[0], r.G[0]) + r.hd
    np.testing.assert_allclose(h, want, rtol=1e-13)


def test_effective_matches_naive_loop():
    cfg = small_config(L=3, K=3, S=2, M=3, N_r=2, N_c=3)
    stats = random_statistics(cfg, seed=3)
    r = sample_channels(stats, 1)
    p = PhaseConfig.random(cfg.L, cfg.N, 2)
    h = r.effective(p)
    for k in range(cfg.K):
        for s in range(cfg.S):
            for m in range(cfg.M):
                acc = r.hd[k, s, m]
                for l in range(cfg.L):
                    for n in range(cfg.N):
                        acc += r.hr[l, k, n] * p.theta[l, n] * r.G[l, s, n, m]
                assert h[k, s, m] == pytest.approx(acc, rel=1e-12, abs=1e-14)


def test_effective_dimension_mismatch():
    stats = random_statistics(small_config(), seed=0)
    with pytest.raises(ValueError):
        effective_channel(sample_channels(stats, 0), PhaseConfig.identity(1, 4))


def test_effective_cache_tracks_phases():
    stats = random_statistics(small_config(), seed=0)
    r = sample_channels(stats, 0)
    p1, p2 = PhaseConfig.random(2, 4, 1), PhaseConfig.random(2, 4, 2)
    h1 = r.effective(p1)
    h2 = r.effective(p2)
    assert not np.allclose(h1, h2)
    np.testing.assert_array_equal(r.effective(p1), effective_channel(r, p1))


# -- precoder and power -----------------------------------------------------------------------

def test_mr_precoder_cases():
    h = np.array([[[1.0, 2.0]]], dtype=complex)
    np.testing.assert_array_equal(mr_precoder(h, np.zeros((1, 1))), np.zeros((1, 1, 2)))
    np.testing.assert_array_equal(mr_precoder(h, np.ones((1, 1))), h)
    with pytest.raises(ValueError):
        mr_precoder(h, -np.ones((1, 1)))


@given(st.integers(0, 1000))
def test_mr_precoder_norm(seed):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((3, 2, 4)) + 1j * rng.standard_normal((3, 2, 4))
    eta = rng.uniform(0, 2, (3, 2))
    w = mr_precoder(h, eta)
    np.testing.assert_allclose(np.sum(np.abs(w) ** 2, -1), eta * np.sum(np.abs(h) ** 2, -1), rtol=1e-12)


def test_power_allocation_checks():
    h = np.ones((2, 1, 2), dtype=complex)
    with pytest.raises(ValueError):
        PowerAllocation(-np.ones((2, 1)))
    a = PowerAllocation(np.full((2, 1), 0.25))
    assert a.bs_power(h)[0] == pytest.approx(1.0)
    assert a.is_feasible(h, 1.0) and not a.is_feasible(h, 0.5)


def test_dump_round_trip(tmp_path):
    stats = random_statistics(small_config(), seed=0)
    r = sample_channels(stats, 5)
    dump_realization(r, tmp_path / "r.csv")
    back = load_realization(tmp_path / "r.csv")
    for name in ("G", "hr", "hd"):
        np.testing.assert_array_equal(getattr(back, name), getattr(r, name))
    assert isinstance(back, ChannelRealization)

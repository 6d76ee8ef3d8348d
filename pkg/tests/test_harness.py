import csv

import numpy as np
import pytest

from cellfree_ris.channel import PhaseConfig, channel_gain, sample_channels
from cellfree_ris.harness import (ALGORITHMS, CSV_COLUMNS, AoOptions, ExperimentSpec, alternating_optimize,
                                  apply_sweep, average_wsr, baseline_random_phases, baseline_uniform_power,
                                  closed_form_validation_spec, interval_channels, random_power, run_drop,
                                  run_experiment, ue_location_spec)
from cellfree_ris.rate import weighted_sum_rate
from cellfree_ris.scenario import LayoutSpec, dbm_to_watt, random_statistics
from conftest import small_config


def _cfg(**kw):
    return small_config(**kw)


# -- spec validation -------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(sweep_values=()), dict(sweep_values=(2, 1)), dict(sweep_values=(1, 1)),
                                dict(drops=0), dict(intervals=0), dict(algos=("nope",)),
                                dict(sweep_axis="colour")])
def test_spec_rejects_invalid(kw):
    with pytest.raises(ValueError):
        ExperimentSpec(config=_cfg(), **kw)


def test_spec_defaults():
    s = ExperimentSpec()
    assert s.drops == 20 and s.intervals == 10 and s.samples == 10_000 and s.sweep_values == (0.0,)


def test_reference_specs():
    s = closed_form_validation_spec()
    assert s.sweep_axis == "M" and s.sweep_values == (2.0, 4.0, 6.0)
    u = ue_location_spec()
    assert set(u.algos) == {"proposed", "no-RIS"} and u.sweep_axis == "ue_x"
    cfg, lay = apply_sweep(u.config, u.layout, "ue_x", 30.0)
    assert lay.cluster_center == (30.0, 50.0)


def test_apply_sweep_axes():
    cfg = _cfg()
    lay = LayoutSpec()
    assert apply_sweep(cfg, lay, "M", 6)[0].M == 6
    c = apply_sweep(cfg, lay, "N", 12)[0]
    assert (c.N_r, c.N_c) == (3, 4)
    assert apply_sweep(cfg, lay, "P_max_dbm", 30)[0].P_max == pytest.approx(dbm_to_watt(30))
    assert apply_sweep(cfg, lay, "snr_db", 10)[0].P_max == pytest.approx(10 * cfg.N0)
    assert apply_sweep(cfg, lay, "none", 0) == (cfg, lay)


# -- baselines ----------------------------------------------------------------------------------

def test_random_phases_unit_modulus_and_seeded():
    stats = random_statistics(_cfg(), 0)
    a = baseline_random_phases(stats, seed=3)
    np.testing.assert_allclose(np.abs(a.u), 1)
    np.testing.assert_array_equal(a.u, baseline_random_phases(stats, seed=3).u)


def test_uniform_and_random_power_spend_budget():
    cfg = _cfg(K=3)
    stats = random_statistics(cfg, 1)
    real = sample_channels(stats, 1)
    phases = PhaseConfig.random(cfg.L, cfg.N, 1)
    h = real.effective(phases)
    u = baseline_uniform_power(real, cfg, phases).eta
    np.testing.assert_allclose((u * channel_gain(h)).sum(0), cfg.P_max)
    np.testing.assert_allclose(u * channel_gain(h), cfg.P_max / 3)
    r = random_power(h, cfg.P_max, np.random.default_rng(0)).eta
    np.testing.assert_allclose((r * channel_gain(h)).sum(0), cfg.P_max)


# -- alternating optimization ---------------------------------------------------------------------

def test_average_wsr_is_mean_over_intervals():
    cfg = _cfg()
    reals = sample_channels(random_statistics(cfg, 2), 2, n=3)
    H = interval_channels(reals, PhaseConfig.random(cfg.L, cfg.N, 0))
    assert H.shape == (3, cfg.K, cfg.S, cfg.M)
    etas = [np.full((cfg.K, cfg.S), 0.1 * (t + 1)) for t in range(3)]
    want = np.mean([weighted_sum_rate(H[t], etas[t], cfg) for t in range(3)])
    assert average_wsr(H, etas, cfg) == pytest.approx(want)


def test_alternating_optimize_monotone():
    cfg = _cfg(K_bs_ris=2.0, K_ris_ue=2.0)
    stats = random_statistics(cfg, 4)
    reals = sample_channels(stats, 4, n=3)
    init = PhaseConfig.random(cfg.L, cfg.N, 0)
    phases, allocs, trace = alternating_optimize(stats, reals, cfg, AoOptions(max_rounds=5), init=init)
    assert np.all(np.diff(trace.objective) >= -1e-12)
    assert len(allocs) == 3 and trace.rounds >= 1
    H = interval_channels(reals, phases)
    assert average_wsr(H, [a.eta for a in allocs], cfg) == pytest.approx(trace.objective[-1])
    np.testing.assert_allclose(np.abs(phases.u), 1, atol=1e-12)


def test_alternating_optimize_without_ris():
    cfg = _cfg(L=0)
    stats = random_statistics(cfg, 0)
    phases, allocs, trace = alternating_optimize(stats, sample_channels(stats, 0, n=2), cfg)
    assert trace.rounds == 0 and trace.converged and len(allocs) == 2


def test_alternating_optimize_needs_realizations():
    cfg = _cfg()
    with pytest.raises(ValueError):
        alternating_optimize(random_statistics(cfg, 0), [], cfg)


# -- experiments ----------------------------------------------------------------------------------

FAST = AoOptions(max_rounds=2)


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_experiment_csv_and_determinism(tmp_path):
    spec = dict(config=_cfg(), sweep_axis="M", sweep_values=(1, 2), drops=2, intervals=2, samples=2000,
                algos=("proposed", "random-phases", "uniform-power", "random-everything", "no-RIS",
                       "closed-form", "monte-carlo"), ao=FAST, seed=5)
    a = run_experiment(ExperimentSpec(out=str(tmp_path / "a.csv"), **spec))
    b = run_experiment(ExperimentSpec(out=str(tmp_path / "b.csv"), **spec))
    assert not a.failures
    ra, rb = _read(tmp_path / "a.csv"), _read(tmp_path / "b.csv")
    assert ra[0] == CSV_COLUMNS
    assert len(ra) == 1 + 2 * 7
    strip = lambda rows: [r[:-1] for r in rows]           # wallclock differs
    assert strip(ra) == strip(rb)
    for p in a.points:
        assert np.isfinite(p.mean_wsr) and p.stderr >= 0 and len(p.per_drop) == 2


def test_run_experiment_parallel_matches_serial():
    spec = dict(config=_cfg(), drops=3, intervals=1, algos=("random-phases", "random-everything"), seed=1)
    a = run_experiment(ExperimentSpec(**spec))
    b = run_experiment(ExperimentSpec(workers=2, **spec))
    assert [p.per_drop for p in a.points] == [p.per_drop for p in b.points]


def test_layout_variants_run():
    cfg = _cfg()
    for algo in ("DAS-layout", "centralized-layout", "no-RIS"):
        wsr, iters = run_drop(cfg, LayoutSpec(), algo, 0, 0, 0, 1, 1000, FAST)
        assert np.isfinite(wsr) and wsr > 0


def test_failures_are_recorded_not_raised():
    # a negative noise power makes every optimizer fail inside the drop
    bad = _cfg()
    object.__setattr__(bad, "N0", -1.0)
    res = run_experiment(ExperimentSpec(config=bad, drops=1, intervals=1, algos=("random-phases",)))
    assert res.failures and np.isnan(res.points[0].mean_wsr)


def test_proposed_beats_baselines_on_paired_drops():
    spec = ExperimentSpec(config=_cfg(K_bs_ris=3.0, K_ris_ue=3.0), drops=4, intervals=2, ao=FAST, seed=2,
                          algos=("proposed", "random-everything"))
    res = run_experiment(spec)
    prop, rnd = (np.array(p.per_drop) for p in res.points)
    assert np.all(prop >= rnd)


def test_algorithm_names():
    assert len(set(ALGORITHMS)) == len(ALGORITHMS) == 9


@pytest.mark.slow
def test_ris_helps_along_user_line():
    """Paired drops on the fixed BS/RIS layout: with RISs at least as good as
    without them at each user-cluster position (sign test at 95%)."""
    from math import comb
    spec = ue_location_spec(xs=(30.0,), drops=20, intervals=2, ao=AoOptions(max_rounds=2))
    res = run_experiment(spec)
    assert not res.failures
    for x in spec.sweep_values:
        ris = np.array(next(p.per_drop for p in res.points if p.algo == "proposed" and p.sweep_value == x))
        bare = np.array(next(p.per_drop for p in res.points if p.algo == "no-RIS" and p.sweep_value == x))
        wins = int(np.sum(ris >= bare))
        p_value = sum(comb(20, k) for k in range(wins, 21)) / 2 ** 20
        assert ris.mean() >= bare.mean() and p_value < 0.05, (x, wins, ris.mean(), bare.mean())

"""Two-timescale alternating optimization, baselines and experiment sweeps.

A drop is one random deployment (statistical CSI) with ``intervals``
coherence intervals of small-scale fading.  RIS phases are designed once per
drop from statistical CSI; power is re-optimized per interval from the
instantaneous effective channels.  Results are written as CSV with columns
sweep_value, algo, mean_wsr_bps_hz, stderr, iters_to_converge, wallclock_s.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelRealization, PhaseConfig, PowerAllocation, channel_gain, sample_channels
from .power_pds import PdsOptions, optimize_power, uniform_power
from .rate import closed_form_wsr, monte_carlo_rate, statistical_equal_power, weighted_sum_rate
from .ris_pdd import PddOptions, optimize_phases
from .scenario import LayoutSpec, SystemConfig, build_statistics, dbm_to_watt, default_config, place_nodes

CSV_COLUMNS = ["sweep_value", "algo", "mean_wsr_bps_hz", "stderr", "iters_to_converge", "wallclock_s"]


# -- alternating optimization -----------------------------------------------------

@dataclass
class AoOptions:
    max_rounds: int = 20
    tol: float = 1e-3       # relative gain of the interval-averaged sum-rate
    # a few (r, kappa) refresh + PDD rounds per AO round; each is one
    # majorize-minimize step, and one step per round converges too slowly
    pdd: PddOptions = field(default_factory=lambda: PddOptions(max_rounds=3))
    pds: PdsOptions = field(default_factory=lambda: PdsOptions(max_iter=200))
    phase_seed: int = 0


@dataclass
class AoTrace:
    objective: list = field(default_factory=list)   # interval-averaged weighted sum-rate per round
    accepted: list = field(default_factory=list)
    phase_traces: list = field(default_factory=list)
    power_converged: list = field(default_factory=list)
    converged: bool = False

    @property
    def rounds(self):
        return len(self.objective) - 1


def _as_realizations(realizations):
    if isinstance(realizations, ChannelRealization):
        realizations = [realizations]
    out = []
    for real in realizations:
        if real.batched:
            out.extend(ChannelRealization(real.G[i], real.hr[i], real.hd[i]) for i in range(len(real.hd)))
        else:
            out.append(real)
    if not out:
        raise ValueError("need at least one channel realization")
    return out


def interval_channels(realizations, phases: PhaseConfig):
    """Effective channels of every interval, shape (T, K, S, M)."""
    return np.stack([real.effective(phases) for real in _as_realizations(realizations)])


def average_wsr(H, etas, config):
    """Mean over intervals of the instantaneous weighted sum-rate."""
    return float(np.mean([weighted_sum_rate(h, eta, config) for h, eta in zip(H, etas)]))


def _power_round(H, etas, config, opts: AoOptions):
    out, ok = [], []
    for h, eta in zip(H, etas):
        alloc, tr = optimize_power(h, None if eta is None else PowerAllocation(eta), config, opts.pds)
        out.append(alloc.eta)
        ok.append(tr.converged)
    return out, all(ok)


def alternating_optimize(stats, realizations, config: SystemConfig | None = None,
                         opts: AoOptions | None = None, init: PhaseConfig | None = None):
    """Alternate statistical RIS design and per-interval power allocation.

    Round 0 allocates power under the initial phases.  Each later round runs
    the RIS optimizer with the across-interval mean allocation held fixed,
    then re-optimizes every interval's power warm-started from the previous
    allocation.  A round is kept only if the interval-averaged weighted
    sum-rate does not decrease; the loop stops at the first rejected round,
    when the relative gain falls below ``tol``, or after ``max_rounds``.
    Returns (PhaseConfig, list of PowerAllocation, AoTrace).
    """
    config = config or stats.config
    opts = opts or AoOptions()
    reals = _as_realizations(realizations)
    phases = init or PhaseConfig.random(config.L, config.N, opts.phase_seed)
    trace = AoTrace()
    H = interval_channels(reals, phases)
    etas, ok = _power_round(H, [None] * len(H), config, opts)
    R = average_wsr(H, etas, config)
    trace.objective.append(R)
    trace.accepted.append(True)
    trace.power_converged.append(ok)
    if config.L == 0:
        trace.converged = True
        return phases, [PowerAllocation(e) for e in etas], trace
    for _ in range(opts.max_rounds):
        nominal = PowerAllocation(np.mean(etas, axis=0))
        cand, ptrace = optimize_phases(stats, nominal, phases, opts.pdd)
        trace.phase_traces.append(ptrace)
        H_new = interval_channels(reals, cand)
        etas_new, ok = _power_round(H_new, etas, config, opts)
        R_new = average_wsr(H_new, etas_new, config)
        if R_new < R:
            trace.accepted.append(False)
            trace.objective.append(R)
            trace.power_converged.append(ok)
            trace.converged = True
            break
        gain = (R_new - R) / max(abs(R), 1e-300)
        phases, etas, R = cand, etas_new, R_new
        trace.objective.append(R)
        trace.accepted.append(True)
        trace.power_converged.append(ok)
        if gain < opts.tol:
            trace.converged = True
            break
    return phases, [PowerAllocation(e) for e in etas], trace


# -- baselines ----------------------------------------------------------------------

def baseline_random_phases(stats, config: SystemConfig | None = None, seed=None) -> PhaseConfig:
    """Independent uniform phases on [0, 2pi) for every RIS element."""
    config = config or stats.config
    return PhaseConfig.random(config.L, config.N, seed)


def baseline_uniform_power(real, config: SystemConfig, phases: PhaseConfig | None = None) -> PowerAllocation:
    """eta_ks = P_max / (K ||h_ks||^2): each BS spends its whole budget equally."""
    h = real.effective(phases) if isinstance(real, ChannelRealization) and phases is not None else \
        (real.hd if isinstance(real, ChannelRealization) else np.asarray(real))
    return uniform_power(h, config.P_max)


def random_power(h, P_max, rng):
    """Each BS splits its full budget across users with Dirichlet(1) shares."""
    K, S, _ = h.shape
    share = rng.dirichlet(np.ones(K), size=S).T          # (K, S)
    gain = channel_gain(h)
    return PowerAllocation(np.where(gain > 0, share * P_max / np.where(gain > 0, gain, 1.0), 0.0))


# -- experiment plumbing -------------------------------------------------------------

ALGORITHMS = ("proposed", "random-phases", "uniform-power", "random-everything", "no-RIS",
              "DAS-layout", "centralized-layout", "closed-form", "monte-carlo")
SWEEP_AXES = ("none", "M", "N", "P_max_dbm", "K_factor", "ue_x", "snr_db")


@dataclass(frozen=True)
class ExperimentSpec:
    config: SystemConfig = field(default_factory=default_config)
    layout: LayoutSpec = field(default_factory=LayoutSpec)
    sweep_axis: str = "none"
    sweep_values: tuple = (0.0,)
    algos: tuple = ("proposed",)
    drops: int = 20
    intervals: int = 10
    samples: int = 10_000
    seed: int = 0
    out: str | None = None
    ao: AoOptions = field(default_factory=AoOptions)
    ue_line_y: float = 50.0      # cluster ordinate for the ue_x sweep
    workers: int = 1

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}")
        vals = tuple(float(v) for v in self.sweep_values)
        if not vals:
            raise ValueError("empty sweep")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep values must be strictly increasing")
        object.__setattr__(self, "sweep_values", vals)
        if self.drops < 1 or self.intervals < 1:
            raise ValueError("drops and intervals must be >= 1")
        unknown = set(self.algos) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}")


@dataclass
class PointResult:
    sweep_value: float
    algo: str
    mean_wsr: float
    stderr: float
    iters: float
    wallclock_s: float
    per_drop: list
    failures: list


@dataclass
class RunResult:
    points: list

    @property
    def failures(self):
        return [(p.sweep_value, p.algo, f) for p in self.points for f in p.failures]

    def table(self, algo):
        return [(p.sweep_value, p.mean_wsr, p.stderr) for p in self.points if p.algo == algo]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CSV_COLUMNS)
            for p in self.points:
                wr.writerow([f"{p.sweep_value:.12g}", p.algo, f"{p.mean_wsr:.12g}", f"{p.stderr:.12g}",
                             f"{p.iters:.6g}", f"{p.wallclock_s:.3f}"])


def _balanced_grid(n):
    """Factor n = N_r * N_c with N_r the largest divisor not above sqrt(n)."""
    r = max(d for d in range(1, int(np.sqrt(n)) + 1) if n % d == 0)
    return r, n // r


def apply_sweep(config: SystemConfig, layout: LayoutSpec, axis, value, ue_line_y=50.0):
    """Return (config, layout) for one sweep point."""
    if axis == "none":
        return config, layout
    if axis == "M":
        return config.replace(M=int(value)), layout
    if axis == "N":
        r, c = _balanced_grid(int(value))
        return config.replace(N_r=r, N_c=c), layout
    if axis == "P_max_dbm":
        return config.replace(P_max=float(dbm_to_watt(value))), layout
    if axis == "snr_db":
        return config.replace(P_max=config.N0 * 10.0 ** (value / 10.0)), layout
    if axis == "K_factor":
        return config.with_k_factors(float(value)), layout
    if axis == "ue_x":
        return config, LayoutSpec("ue-cluster", layout.bs_xy, layout.ris_xy, None, (float(value), ue_line_y))
    raise ValueError(f"unknown sweep axis {axis!r}")


def _drop_seeds(seed, point, drop):
    ss = np.random.SeedSequence([seed, point, drop])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(4)]   # layout, fading, phases, power


def _variant_geometry(config, layout, base_geom, algo, seed):
    """Config and geometry for the antenna-layout comparisons: the RIS and
    user positions of the drop are kept, only the transmitters change."""
    rng = np.random.default_rng(seed)
    keep = dict(ris_xy=base_geom.ris_positions[:, :2], ue_xy=base_geom.ue_positions[:, :2])
    side = config.area_side
    if algo == "no-RIS":
        cfg = config.replace(L=0)
        lay = LayoutSpec("fixed", base_geom.bs_positions[:, :2], None, keep["ue_xy"])
    elif algo == "DAS-layout":
        n = config.S * config.M
        cfg = config.replace(S=n, M=1, P_max=config.P_max / config.M)
        lay = LayoutSpec("fixed", rng.uniform(0, side, (n, 2)), **keep)
    else:   # centralized-layout
        cfg = config.replace(S=1, M=config.S * config.M, P_max=config.P_max * config.S)
        lay = LayoutSpec("fixed", np.array([[side / 2, side / 2]]), **keep)
    return cfg, place_nodes(cfg, lay, seed)


@dataclass
class Drop:
    """Everything one (sweep point, algorithm, drop) run needs."""
    config: SystemConfig
    stats: object
    phases0: PhaseConfig
    seeds: list          # layout, fading, phases, power


def prepare_drop(config: SystemConfig, layout: LayoutSpec, algo, seed, point, drop) -> Drop:
    """Deployment, statistics and initial phases of one drop.  Seeds depend
    only on (seed, point, drop), so every algorithm sees the same drop."""
    seeds = _drop_seeds(seed, point, drop)
    s_layout, _, s_phase, _ = seeds
    geom = place_nodes(config, layout, s_layout)
    cfg = config
    if algo in ("no-RIS", "DAS-layout", "centralized-layout"):
        cfg, geom = _variant_geometry(config, layout, geom, algo, s_layout + 1)
    stats = build_statistics(cfg, geom, seed=s_layout)
    return Drop(cfg, stats, baseline_random_phases(stats, cfg, s_phase), seeds)


def run_drop(config: SystemConfig, layout: LayoutSpec, algo, seed, point, drop, intervals, samples,
             ao: AoOptions):
    """One drop of one algorithm: returns (weighted sum-rate, iterations)."""
    d = prepare_drop(config, layout, algo, seed, point, drop)
    cfg, stats, phases0 = d.config, d.stats, d.phases0
    _, s_fading, s_phase, s_power = d.seeds
    if algo in ("closed-form", "monte-carlo"):
        eta = statistical_equal_power(stats, phases0)
        if algo == "closed-form":
            return closed_form_wsr(stats, phases0, eta), 0
        return monte_carlo_rate(stats, phases0, eta, samples, s_fading).weighted_sum, 0
    reals = sample_channels(stats, s_fading, n=intervals)
    if algo in ("proposed", "no-RIS", "DAS-layout", "centralized-layout"):
        opts = AoOptions(ao.max_rounds, ao.tol, ao.pdd, ao.pds, s_phase)
        _, allocs, trace = alternating_optimize(stats, reals, cfg, opts, init=phases0)
        return trace.objective[-1], trace.rounds
    H = interval_channels(reals, phases0)
    if algo == "random-phases":
        etas, iters = [], 0
        for h in H:
            alloc, tr = optimize_power(h, None, cfg, ao.pds)
            etas.append(alloc.eta)
            iters += len(tr.objective) - 1
        return average_wsr(H, etas, cfg), iters / len(H)
    if algo == "uniform-power":
        # as many (r, kappa) refresh rounds, with the same stopping rule, as the AO loop gets
        pdd = replace(ao.pdd, max_rounds=ao.max_rounds, round_tol=ao.tol)
        phases, ptrace = optimize_phases(stats, statistical_equal_power(stats, phases0), phases0, pdd)
        H = interval_channels(reals, phases)
        return average_wsr(H, [uniform_power(h, cfg.P_max).eta for h in H], cfg), len(ptrace.wsr) - 1
    if algo == "random-everything":
        rng = np.random.default_rng(s_power)
        return average_wsr(H, [random_power(h, cfg.P_max, rng).eta for h in H], cfg), 0
    raise ValueError(f"unknown algorithm {algo!r}")


def _drop_task(args):
    cfg, lay, algo, seed, point, drop, intervals, samples, ao = args
    t0 = time.perf_counter()
    try:
        wsr, iters = run_drop(cfg, lay, algo, seed, point, drop, intervals, samples, ao)
        return wsr, iters, time.perf_counter() - t0, None
    except Exception as exc:   # recorded per drop; the run continues
        return np.nan, np.nan, time.perf_counter() - t0, f"drop {drop}: {type(exc).__name__}: {exc}"


def run_experiment(spec: ExperimentSpec) -> RunResult:
    """Run every (sweep point, algorithm, drop) and aggregate mean +- SE.

    Drops use seeds derived from (spec.seed, point index, drop index), so all
    algorithms see the same deployments and fading (paired comparisons) and
    results do not depend on the number of workers.
    """
    tasks, keys = [], []
    for p, value in enumerate(spec.sweep_values):
        cfg, lay = apply_sweep(spec.config, spec.layout, spec.sweep_axis, value, spec.ue_line_y)
        for algo in spec.algos:
            for d in range(spec.drops):
                tasks.append((cfg, lay, algo, spec.seed, p, d, spec.intervals, spec.samples, spec.ao))
                keys.append((value, algo))
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            outs = list(pool.map(_drop_task, tasks))
    else:
        outs = [_drop_task(t) for t in tasks]
    grouped = {}
    for key, out in zip(keys, outs):
        grouped.setdefault(key, []).append(out)
    points = []
    for (value, algo), rows in grouped.items():
        wsr = np.array([r[0] for r in rows])
        good = wsr[np.isfinite(wsr)]
        n = len(good)
        mean = float(good.mean()) if n else float("nan")
        se = float(good.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        iters = np.array([r[1] for r in rows], dtype=float)
        points.append(PointResult(value, algo, mean, se,
                                  float(np.nanmean(iters)) if np.isfinite(iters).any() else float("nan"),
                                  float(sum(r[2] for r in rows)), list(wsr), [r[3] for r in rows if r[3]]))
    result = RunResult(points)
    if spec.out:
        result.write_csv(spec.out)
    return result


# -- reference experiment designs --------------------------------------------------------

FIG7_BS_XY = ((5.0, 5.0), (95.0, 5.0), (50.0, 95.0))
FIG7_RIS_XY = ((25.0, 60.0), (75.0, 60.0), (50.0, 30.0))


def closed_form_validation_spec(drops=1, samples=10_000, seed=0, out=None) -> ExperimentSpec:
    """Random phases, equal power, M in {2, 4, 6}: closed form vs Monte Carlo."""
    return ExperimentSpec(sweep_axis="M", sweep_values=(2, 4, 6), algos=("closed-form", "monte-carlo"),
                          drops=drops, samples=samples, seed=seed, out=out)


def ue_location_spec(xs=(10.0, 30.0, 50.0, 70.0, 90.0), drops=20, intervals=10, seed=0, out=None,
                     ao: AoOptions | None = None) -> ExperimentSpec:
    """User cluster moved along a horizontal line, with and without RISs,
    fixed BS and RIS coordinates."""
    return ExperimentSpec(layout=LayoutSpec("ue-cluster", FIG7_BS_XY, FIG7_RIS_XY, None, (50.0, 50.0)),
                          sweep_axis="ue_x", sweep_values=tuple(xs), algos=("proposed", "no-RIS"),
                          drops=drops, intervals=intervals, seed=seed, out=out, ao=ao or AoOptions())

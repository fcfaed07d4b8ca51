"""Monte Carlo estimators and bound checks for tracer path ensembles.

Per-path statistics (survival probability, retraction tails, hitting times,
restart counts, finite-time drift) run as streaming vectorized ensembles
with one fresh environment per path, so samples are independent and the
standard errors are the usual ones. Cycle statistics (renewal drift,
stationarity, Lagrangian bias) pool regeneration cycles from a few long
paths and use batch-means standard errors to absorb the weak dependence
between consecutive cycles. Burn-in cycles approximate sampling from the
invariant cycle law; the regeneration chain forgets its start geometrically,
so estimates are insensitive to the exact burn-in (and that insensitivity is
itself checked).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import stats as sps

from .field import FieldSpec, FieldRealization
from .renewal import (CensorPolicy, cycle_increments, extract_regenerations,
                      retraction_tail_bound)
from .sde import PathRecord, SimParams
from .walkers import ProjectionWalker


class InconclusiveError(RuntimeError):
    """The ensemble cannot answer the question (typically: all censored or
    too few qualifying samples). Carries context instead of a number."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


@dataclass
class Estimate:
    """A point estimate with its uncertainty; never a bare number."""
    name: str
    value: float | np.ndarray
    std_error: float | np.ndarray
    n: int
    ci95: tuple | np.ndarray = dc_field(init=False)
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.value, dtype=np.float64)
        se = np.asarray(self.std_error, dtype=np.float64)
        lo, hi = v - 1.96 * se, v + 1.96 * se
        self.ci95 = (float(lo), float(hi)) if v.ndim == 0 else np.stack([lo, hi])


@dataclass
class TailCurve:
    """Empirical retraction probabilities per level with their bound."""
    levels: np.ndarray
    empirical: np.ndarray
    std_errors: np.ndarray
    paper_bounds: np.ndarray
    n: int
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("levels must be strictly increasing")

    def satisfied(self, n_se: float = 3.0) -> bool:
        return bool(np.all(self.empirical <= self.paper_bounds
                           + n_se * self.std_errors))


@dataclass
class DriftReport:
    """Drift estimated two ways plus the cycle means behind the ratio."""
    v_lln: np.ndarray | None
    v_renewal: np.ndarray
    w_star_hat: np.ndarray
    t_star_hat: float
    discrepancy: float
    burn_in: int
    v_lln_se: np.ndarray | None = None
    v_renewal_se: np.ndarray | None = None
    t_star_se: float | None = None
    n_cycles: int = 0
    meta: dict = dc_field(default_factory=dict)


@dataclass
class StationarityReport:
    """Two-window distribution comparison of cycle statistics."""
    ks_duration: tuple
    ks_drift_displacement: tuple
    lag1_autocorr_duration: float
    burn_in: int
    window: int
    n_cycles: int


def survival_lower_bound(delta: float, kappa: float = 1.0) -> float:
    """Provable floor for the no-retraction probability.

    exp(-theta * drift_proj) is a supermartingale for theta up to 2*delta/
    kappa; optional sampling at the exit of a widening strip gives
    P[never retract one unit] >= 1 - exp(-theta). Uses the conservative
    theta = delta/2 of the kappa = 1 analysis, capped by 2*delta/kappa.
    """
    theta = min(delta / 2.0, 2.0 * delta / kappa)
    return 1.0 - math.exp(-theta)


def _binomial(name, hits: int, n: int, **meta) -> Estimate:
    p = hits / n
    se = math.sqrt(max(p * (1.0 - p), 0.0) / n)
    return Estimate(name, p, se, n, meta=meta)


# ---------------------------------------------------------------------------
# streaming per-path ensembles


def run_retraction_trials(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                          n_paths: int, seed: int, audit: bool = False):
    """Resolve the retraction question for n independent paths from 0.

    Returns dict arrays: status (1 finite, 2 confirmed, 3 audited-survived,
    4 retracted-after-confirmation, 0 censored), resolution times, and the
    running projection maximum at resolution (the max-before-retraction for
    finite paths). With audit=True, confirmed paths keep running until they
    either climb another confirm_height (status 3) or dip below the original
    retraction level (status 4).
    """
    walker = ProjectionWalker(spec, params, n_paths, seed)
    h = params.step
    y0_all = walker.proj.copy()
    level_d = y0_all - 1.0
    level_u = y0_all + policy.confirm_height
    level_audit = y0_all + 2.0 * policy.confirm_height

    status = np.zeros(n_paths, dtype=np.int8)
    t_res = np.full(n_paths, np.nan)
    run_max = y0_all.copy()

    if policy.confirm_height == 0.0:
        status[:] = 2 if not audit else 2  # confirmed at once; audit keeps going
        t_res[:] = 0.0
        if not audit:
            return {"status": status, "time": t_res, "max_at_resolution": run_max}

    alive = np.arange(n_paths)
    n_max = params.n_steps_max
    for t in range(n_max):
        if not alive.size:
            break
        y0, y1, lo, hi = walker.advance(alive)
        run_max[alive] = np.maximum(run_max[alive], hi)
        st = status[alive]
        resolving = st == 0
        watching = st == 2

        down = resolving & (lo <= level_d[alive])
        up = resolving & ~down & (hi >= level_u[alive])
        retract = watching & (lo <= level_d[alive])
        survive = watching & ~retract & (hi >= level_audit[alive])

        fired = down | up | retract | survive
        if np.any(fired):
            rows = alive[fired]
            new = np.where(down[fired], 1,
                           np.where(up[fired], 2,
                                    np.where(retract[fired], 4, 3)))
            status[rows] = new
            t_res[rows] = (t + 1) * h
            keep = ~fired
            if audit:
                keep |= up  # confirmed paths continue under watch
            alive = alive[keep]
    return {"status": status, "time": t_res, "max_at_resolution": run_max}


def estimate_gamma(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                   n_paths: int, seed: int = 0) -> Estimate:
    """Fraction of paths whose retraction question resolves to "never".

    Censored paths count as not confirmed (reported in meta); an all-censored
    or zero-confirmation ensemble raises InconclusiveError.
    """
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    res = run_retraction_trials(spec, params, policy, n_paths, seed)
    n_conf = int(np.sum(res["status"] == 2))
    n_cens = int(np.sum(res["status"] == 0))
    if n_cens == n_paths:
        raise InconclusiveError("all paths censored; enlarge the horizon",
                                n_paths=n_paths)
    if n_conf == 0:
        raise InconclusiveError("no confirmations observed", n_paths=n_paths,
                                censored=n_cens)
    est = _binomial("gamma", n_conf, n_paths, censored=n_cens,
                    confirm_height=policy.confirm_height,
                    lower_bound=survival_lower_bound(spec.delta, params.kappa))
    return est


def conditional_max_mean(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                         n_paths: int, seed: int = 0) -> Estimate:
    """Truncated mean of the maximum climb before a retraction.

    Averages (max climb before retraction) * 1{retracts} over all paths,
    i.e. the unconditioned truncated expectation; finite with an SE.
    """
    res = run_retraction_trials(spec, params, policy, n_paths, seed)
    finite = res["status"] == 1
    n_finite = int(np.sum(finite))
    if n_finite < 50:
        raise InconclusiveError("too few retracting paths to estimate",
                                n_finite=n_finite, n_paths=n_paths)
    y_start = np.zeros(n_paths)
    climb = res["max_at_resolution"] - y_start
    z = np.where(finite, climb, 0.0)
    value = float(np.mean(z))
    se = float(np.std(z, ddof=1) / math.sqrt(n_paths))
    return Estimate("conditional_max_mean", value, se, n_paths,
                    meta={"n_finite": n_finite,
                          "censored": int(np.sum(res["status"] == 0))})


def dyadic_tail_masses(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                       n_paths: int, seed: int = 0, m_max: int = 4):
    """P[2^m <= max climb < 2^(m+1), retraction happens] for m = 0..m_max."""
    res = run_retraction_trials(spec, params, policy, n_paths, seed)
    finite = res["status"] == 1
    climb = res["max_at_resolution"]
    masses = []
    for m in range(m_max + 1):
        hit = finite & (climb >= 2.0 ** m) & (climb < 2.0 ** (m + 1))
        masses.append(_binomial(f"tail_mass_2^{m}", int(np.sum(hit)), n_paths))
    return masses


def run_two_sided_exits(spec: FieldSpec, params: SimParams, levels,
                        n_paths: int, seed: int):
    """Which side of +/-level each path exits first, for several levels.

    Returns (down_first, resolved) boolean arrays of shape (n_paths, n_levels).
    """
    levels = np.asarray(levels, dtype=np.float64)
    n_lev = len(levels)
    walker = ProjectionWalker(spec, params, n_paths, seed)
    down_first = np.zeros((n_paths, n_lev), dtype=bool)
    resolved = np.zeros((n_paths, n_lev), dtype=bool)
    alive = np.arange(n_paths)
    for _ in range(params.n_steps_max):
        if not alive.size:
            break
        y0, y1, lo, hi = walker.advance(alive)
        sub = resolved[alive]
        down = (~sub) & (lo[:, None] <= -levels)
        up = (~sub) & (~down) & (hi[:, None] >= levels)
        if down.any() or up.any():
            rows = alive
            down_first[rows] = down_first[rows] | down
            resolved[rows] = sub | down | up
            alive = alive[~resolved[alive].all(axis=1)]
    return down_first, resolved


def backtrack_tail(spec: FieldSpec, params: SimParams, levels, n_paths: int,
                   seed: int = 0) -> TailCurve:
    """Empirical P[drop below -M before climbing +M] per dyadic level M.

    Unresolved paths count as backtracks (conservative, reported in meta).
    The comparison bound uses the explicit drift-floor constants; it is
    one-sided and checked as empirical <= bound + 3 SE by callers.
    """
    levels = sorted(float(M) for M in levels)
    for M in levels:
        k = math.log2(M)
        if M < 2 or abs(k - round(k)) > 1e-9:
            raise ValueError(f"levels must be dyadic (2, 4, 8, ...); got {M}")
        if retraction_tail_bound(spec.delta, spec.dim, M, params.kappa) < 10.0 / n_paths:
            raise ValueError(f"level {M} not estimable with n_paths={n_paths}")
    down_first, resolved = run_two_sided_exits(spec, params, levels, n_paths, seed)
    censored = ~resolved
    hits = down_first | censored
    emp = hits.mean(axis=0)
    se = np.sqrt(emp * (1.0 - emp) / n_paths)
    bounds = np.array([retraction_tail_bound(spec.delta, spec.dim, M, params.kappa)
                       for M in levels])
    return TailCurve(np.asarray(levels), emp, se, bounds, n_paths,
                     meta={"censored_per_level": censored.sum(axis=0).tolist()})


def run_first_passage_times(spec: FieldSpec, params: SimParams, level: float,
                            n_paths: int, seed: int):
    """Grid-snapped first time the projection reaches level, per path."""
    walker = ProjectionWalker(spec, params, n_paths, seed)
    h = params.step
    times = np.full(n_paths, np.nan)
    alive = np.arange(n_paths)
    if walker.proj[0] >= level:  # all paths start at the same point
        return np.zeros(n_paths), np.zeros(n_paths, dtype=bool)
    for t in range(params.n_steps_max):
        if not alive.size:
            break
        y0, y1, lo, hi = walker.advance(alive)
        crossed = hi >= level
        if crossed.any():
            times[alive[crossed]] = (t + 1) * h
            alive = alive[~crossed]
    censored = np.isnan(times)
    times[censored] = params.horizon
    return times, censored


def hitting_time_ratio(spec: FieldSpec, params: SimParams, m: float,
                       n_paths: int, seed: int = 0) -> Estimate:
    """mean(first passage time to level m) / m; compared against 1/delta.

    Censored passages are counted at the horizon (conservative, flagged).
    """
    if m < 10.0 * spec.dependence_range:
        raise ValueError("m must be >= 10 * dependence range (ratio regime)")
    times, censored = run_first_passage_times(spec, params, m, n_paths, seed)
    value = float(np.mean(times) / m)
    se = float(np.std(times, ddof=1) / math.sqrt(n_paths) / m)
    return Estimate("hitting_time_ratio", value, se, n_paths,
                    meta={"m": m, "censored": int(censored.sum()),
                          "bound": 1.0 / spec.delta})


def run_restart_ladder(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                       k_max: int, n_paths: int, seed: int):
    """Per-path failure flags of ladder attempts 1..k_max (streaming).

    A path climbs to (running max + r0 + 1), resolves the retraction
    question there, and on failure climbs again from the updated running
    maximum. Once one attempt is confirmed, all later attempts are
    non-failures for that path. Returns (failed, unresolved) arrays of shape
    (n_paths, k_max+1) indexed by attempt (index 0 unused, never a failure).
    """
    r0 = spec.dependence_range
    walker = ProjectionWalker(spec, params, n_paths, seed)
    run_max = walker.proj.copy()
    target = run_max + r0 + 1.0
    phase = np.zeros(n_paths, dtype=np.int8)  # 0 climb, 1 resolve
    level_d = np.zeros(n_paths)
    level_u = np.zeros(n_paths)
    k = np.ones(n_paths, dtype=np.int64)
    failed = np.zeros((n_paths, k_max + 1), dtype=bool)
    unresolved = np.zeros((n_paths, k_max + 1), dtype=bool)
    done = np.zeros(n_paths, dtype=bool)
    alive = np.arange(n_paths)
    for _ in range(params.n_steps_max):
        if not alive.size:
            break
        y0, y1, lo, hi = walker.advance(alive)
        run_max[alive] = np.maximum(run_max[alive], hi)
        ph = phase[alive]

        reach = (ph == 0) & (hi >= target[alive])
        if reach.any():
            rows = alive[reach]
            phase[rows] = 1
            level_d[rows] = walker.proj[rows] - 1.0
            level_u[rows] = walker.proj[rows] + policy.confirm_height

        resolving = (ph == 1)
        dip = resolving & (lo <= level_d[alive])
        conf = resolving & ~dip & (hi >= level_u[alive])
        if dip.any():
            rows = alive[dip]
            failed[rows, k[rows]] = True
            k[rows] += 1
            phase[rows] = 0
            target[rows] = run_max[rows] + r0 + 1.0
            done[rows] |= k[rows] > k_max
        if conf.any():
            done[alive[conf]] = True
        alive = alive[~done[alive]]
    # censored paths: current and later attempts unresolved
    for row in alive:
        unresolved[row, k[row]:] = True
    return failed, unresolved


def restart_survival(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                     k_max: int, n_paths: int, seed: int = 0) -> list[Estimate]:
    """Empirical P[attempt k fails] for k = 0..k_max.

    Unresolved attempts (horizon censoring) count as failures, conservative
    for the geometric-decay bound; counts are reported in meta.
    """
    if k_max > 8:
        raise ValueError("k_max must be <= 8 (geometric decay exhausts samples)")
    failed, unresolved = run_restart_ladder(spec, params, policy, k_max, n_paths, seed)
    out = [Estimate("restart_k0", 1.0, 0.0, n_paths, meta={"k": 0})]
    for kk in range(1, k_max + 1):
        hits = int(np.sum(failed[:, kk] | unresolved[:, kk]))
        est = _binomial(f"restart_k{kk}", hits, n_paths, k=kk,
                        unresolved=int(np.sum(unresolved[:, kk])))
        out.append(est)
    return out


def stokes_drift_lln(spec: FieldSpec, params: SimParams, T: float,
                     n_paths: int, seed: int = 0) -> Estimate:
    """Ensemble average of position(T)/T with per-component SE."""
    n_steps = int(round(T / params.step))
    if n_steps > params.n_steps_max:
        raise ValueError("T exceeds the simulation horizon")
    walker = ProjectionWalker(spec, params, n_paths, seed)
    alive = np.arange(n_paths)
    for _ in range(n_steps):
        walker.advance(alive)
    ratios = walker.x / (n_steps * params.step)
    value = ratios.mean(axis=0)
    se = ratios.std(axis=0, ddof=1) / math.sqrt(n_paths)
    return Estimate("stokes_drift_lln", value, se, n_paths, meta={"T": T})


# ---------------------------------------------------------------------------
# cycle-based estimators


def simulate_cycle_ensemble(spec: FieldSpec, params: SimParams, n_paths: int,
                            seed: int, store_positions: bool = True):
    """n long paths from fresh environments, stored for cycle extraction.

    Returns (records, realizations); records hold positions (optional) and
    the drift projection for the full horizon.
    """
    walker = ProjectionWalker(spec, params, n_paths, seed)
    n_steps = params.n_steps_max
    proj_hist = np.empty((n_paths, n_steps + 1))
    proj_hist[:, 0] = walker.proj
    pos_hist = None
    if store_positions:
        pos_hist = np.empty((n_paths, n_steps + 1, spec.dim))
        pos_hist[:, 0] = walker.x
    alive = np.arange(n_paths)
    for t in range(n_steps):
        walker.advance(alive)
        proj_hist[:, t + 1] = walker.proj
        if store_positions:
            pos_hist[:, t + 1] = walker.x
    records, fields = [], []
    for i in range(n_paths):
        rec = PathRecord(pos_hist[i] if store_positions else None,
                         params.step, params.kappa, spec.vhat,
                         master_seed=seed, path_index=i,
                         drift_proj=proj_hist[i],
                         bridge_enabled=params.bridge_correction)
        records.append(rec)
        fields.append(FieldRealization(spec, int(walker.field_seeds[i])))
    return records, fields


def collect_cycles(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                   n_paths: int, seed: int, store_positions: bool = True):
    """Regeneration decompositions of n fresh long paths."""
    records, fields = simulate_cycle_ensemble(spec, params, n_paths, seed,
                                              store_positions)
    decomps = [extract_regenerations(rec, spec.dependence_range, policy)
               for rec in records]
    return decomps, records, fields


def _batch_ratio_se(num, den, values_axis0=True):
    """Batch-means SE of a ratio-of-sums estimator over ordered samples."""
    n = len(den)
    B = max(2, int(math.ceil(math.sqrt(n))))
    edges = np.linspace(0, n, B + 1).astype(int)
    ratios = []
    for b in range(B):
        s = slice(edges[b], edges[b + 1])
        if edges[b + 1] > edges[b] and np.sum(den[s]) > 0:
            ratios.append(np.sum(num[s], axis=0) / np.sum(den[s]))
    ratios = np.asarray(ratios)
    return ratios.std(axis=0, ddof=1) / math.sqrt(len(ratios)), len(ratios)


def stokes_drift_renewal(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                         burn_in: int, n_cycles: int, n_paths: int = 16,
                         seed: int = 0) -> DriftReport:
    """Renewal-reward drift: pooled cycle displacement over pooled duration.

    Discards burn_in cycles per path, pools the rest in path order, and
    reports batch-means SEs. Raises InconclusiveError when fewer than
    n_cycles complete post-burn-in cycles are available.
    """
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    decomps, _, _ = collect_cycles(spec, params, policy, n_paths, seed)
    disp, dur = [], []
    for dec in decomps:
        if dec.n_cycles > burn_in:
            disp.append(dec.displacements[burn_in:])
            dur.append(dec.durations[burn_in:])
    if not dur:
        raise InconclusiveError("no complete cycles after burn-in",
                                n_paths=n_paths, burn_in=burn_in)
    disp = np.concatenate(disp)
    dur = np.concatenate(dur)
    total = len(dur)
    if total < n_cycles:
        raise InconclusiveError(
            f"only {total} complete cycles after burn-in, need {n_cycles}",
            n_cycles=total, requested=n_cycles)
    v_renewal = disp.sum(axis=0) / dur.sum()
    w_star = disp.mean(axis=0)
    t_star = float(dur.mean())
    v_se, n_batches = _batch_ratio_se(disp, dur)
    t_se = float(dur.std(ddof=1) / math.sqrt(total))
    return DriftReport(
        v_lln=None, v_renewal=v_renewal, w_star_hat=w_star, t_star_hat=t_star,
        discrepancy=math.nan, burn_in=burn_in,
        v_renewal_se=v_se, t_star_se=t_se, n_cycles=total,
        meta={"n_paths": n_paths, "n_batches": n_batches})


def drift_report(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                 burn_in: int, n_cycles: int, T: float, n_paths_lln: int,
                 n_paths_renewal: int = 16, seed: int = 0) -> DriftReport:
    """Both drift estimators plus their discrepancy in combined-SE units."""
    lln = stokes_drift_lln(spec, params, T, n_paths_lln, seed)
    ren = stokes_drift_renewal(spec, params, policy, burn_in, n_cycles,
                               n_paths_renewal, seed + 1)
    diff = np.asarray(lln.value) - ren.v_renewal
    combined = np.sqrt(np.asarray(lln.std_error) ** 2 + ren.v_renewal_se ** 2)
    ren.v_lln = np.asarray(lln.value)
    ren.v_lln_se = np.asarray(lln.std_error)
    ren.discrepancy = float(np.max(np.abs(diff) / np.maximum(combined, 1e-15)))
    ren.meta["lln_T"] = T
    ren.meta["lln_n_paths"] = n_paths_lln
    return ren


def stationarity_test(durations, drift_displacements, burn_in: int,
                      window: int) -> StationarityReport:
    """KS comparison of two consecutive post-burn-in cycle windows.

    durations/drift_displacements are one path's cycle sequence in order.
    """
    durations = np.asarray(durations)
    drift_displacements = np.asarray(drift_displacements)
    need = burn_in + 2 * window
    if len(durations) < need:
        raise InconclusiveError(f"need {need} cycles, have {len(durations)}",
                                n_cycles=len(durations))
    a = slice(burn_in, burn_in + window)
    b = slice(burn_in + window, burn_in + 2 * window)
    ks_dur = sps.ks_2samp(durations[a], durations[b])
    ks_disp = sps.ks_2samp(drift_displacements[a], drift_displacements[b])
    both = durations[burn_in:burn_in + 2 * window]
    lag1 = float(np.corrcoef(both[:-1], both[1:])[0, 1])
    return StationarityReport(
        ks_duration=(float(ks_dur.statistic), float(ks_dur.pvalue)),
        ks_drift_displacement=(float(ks_disp.statistic), float(ks_disp.pvalue)),
        lag1_autocorr_duration=lag1,
        burn_in=burn_in, window=window,
        n_cycles=len(durations))


def stationarity_sweep(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                       burn_in: int, window: int, n_reps: int,
                       seed: int = 0, p_floor: float = 0.01):
    """Stationarity reports for n_reps independent paths.

    Returns (reports, fraction of repetitions with both KS p-values >=
    p_floor). Repetitions with too few cycles are dropped (counted).
    """
    decomps, _, _ = collect_cycles(spec, params, policy, n_reps, seed,
                                   store_positions=False)
    reports, ok, skipped = [], 0, 0
    for dec in decomps:
        try:
            rep = stationarity_test(dec.durations, dec.drift_displacements,
                                    burn_in, window)
        except InconclusiveError:
            skipped += 1
            continue
        reports.append(rep)
        if rep.ks_duration[1] >= p_floor and rep.ks_drift_displacement[1] >= p_floor:
            ok += 1
    if not reports:
        raise InconclusiveError("no repetition had enough cycles",
                                n_reps=n_reps, skipped=skipped)
    return reports, ok / len(reports)


def lagrangian_bias(spec: FieldSpec, params: SimParams, policy: CensorPolicy,
                    n_cycles: int, n_paths: int = 16, seed: int = 0,
                    burn_in: int = 1) -> Estimate:
    """Cycle-time-weighted mean of vhat . u along the path, minus vhat . v.

    Positive or negative: the sign is an empirical observation about the
    compressible sampling bias, not an asserted inequality.
    """
    decomps, records, fields = collect_cycles(spec, params, policy, n_paths, seed)
    vhat = spec.vhat
    nums, durs = [], []
    for dec, rec, fld in zip(decomps, records, fields):
        if dec.n_cycles <= burn_in:
            continue
        inc = cycle_increments(dec, rec, fld,
                               functionals=(lambda u: u @ vhat,), offsets=(0.0,))
        keep = inc.complete.copy()
        keep[:burn_in] = False
        nums.append(inc.xi[keep])
        durs.append(inc.durations[keep])
    if not durs:
        raise InconclusiveError("no complete cycles after burn-in")
    num = np.concatenate(nums)
    dur = np.concatenate(durs)
    if len(dur) < n_cycles:
        raise InconclusiveError(f"only {len(dur)} cycles, need {n_cycles}",
                                n_cycles=len(dur))
    eulerian = float(np.dot(vhat, spec.mean_velocity))
    value = float(num.sum() / dur.sum()) - eulerian
    se, n_batches = _batch_ratio_se(num, dur)
    return Estimate("lagrangian_bias", value, float(se), len(dur),
                    meta={"eulerian_mean": eulerian, "n_batches": n_batches})


# ---------------------------------------------------------------------------
# misclassification audit


@dataclass
class AuditResult:
    n_paths: int
    n_confirmed: int
    n_retracted: int
    budget_bound: float

    @property
    def retraction_fraction(self) -> float:
        return self.n_retracted / max(self.n_confirmed, 1)


def misclassification_audit(spec: FieldSpec, params: SimParams,
                            policy: CensorPolicy, n_paths: int,
                            seed: int = 0) -> AuditResult:
    """Re-watch every confirmed path for another confirm_height of climb.

    Counts confirmed paths that retract below the original level before
    doubling their confirmation height; the fraction must stay within an
    order of magnitude of the policy's a-priori bound.
    """
    res = run_retraction_trials(spec, params, policy, n_paths, seed, audit=True)
    status = res["status"]
    n_conf = int(np.sum((status == 3) | (status == 4)))
    n_retr = int(np.sum(status == 4))
    return AuditResult(
        n_paths=n_paths, n_confirmed=n_conf, n_retracted=n_retr,
        budget_bound=policy.misclassification_bound(spec.delta, spec.dim,
                                                    params.kappa))

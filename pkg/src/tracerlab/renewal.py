"""Detection of the climb/retract ladder and nonretraction times on paths.

A path's projection on the mean-drift direction is scanned for a ladder of
attempts: climb to one dependence-range above the running maximum, then
either retract one unit below the attempt level (failure, next attempt at a
higher record) or never retract (success). "Never" is not observable in
finite time, so a censoring policy declares an attempt confirmed once the
projection climbs a configurable confirmation height above the attempt
level before retracting; the exponential tail of the retraction probability
turns that height into an a-priori misclassification budget. Successful
attempt times are the renewal points; consecutive ones bound regeneration
cycles whose durations and displacements feed the estimators.

All detected times are reported on the simulation grid (bridge-corrected
detection snaps an interior crossing to the end of its step), so cycle
durations are exact multiples of the step and grid bookkeeping stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .sde import PathRecord

D_FINITE = "finite"
D_CONFIRMED_INFINITE = "confirmed_infinite"
D_CENSORED = "censored"

_CHUNK = 8192


def retraction_tail_bound(delta: float, dim: int, height: float,
                          kappa: float = 1.0) -> float:
    """Upper bound on dropping `height` below the start before climbing
    `height` above it, from the drift floor delta: the sum of the two
    explicit exponential terms (stated for kappa = 1, scaled otherwise)."""
    return (math.exp(-delta * height / (4.0 * kappa))
            + math.exp(-delta * height / (4.0 * dim * kappa)))


@dataclass(frozen=True)
class CensorPolicy:
    """Finite-horizon surrogate for the event "never retracts".

    confirm_height: climb required above the attempt level before the
        attempt is declared successful.
    horizon: latest time available to resolve an attempt.
    """

    confirm_height: float
    horizon: float

    def __post_init__(self):
        if self.confirm_height < 0:
            raise ValueError("confirm_height must be >= 0")

    def misclassification_bound(self, delta: float, dim: int, kappa: float = 1.0) -> float:
        """A-priori bound on declaring success for a path that retracts later."""
        return retraction_tail_bound(delta, dim, self.confirm_height, kappa)

    @classmethod
    def from_budget(cls, budget: float, delta: float, dim: int,
                    horizon: float, kappa: float = 1.0) -> "CensorPolicy":
        """Smallest confirmation height with misclassification bound <= budget."""
        if not 0 < budget < 1:
            raise ValueError("budget must be in (0, 1)")
        height = (4.0 * dim * kappa / delta) * math.log(2.0 / budget)
        return cls(confirm_height=height, horizon=horizon)


@dataclass
class DOutcome:
    """Resolution of one retraction question from a given start."""
    status: str
    time: float | None = None
    index: int | None = None


@dataclass
class LadderRecord:
    """Attempt times S_k, failure times R_k and running maxima M_k.

    Lists are aligned per attempt k = 1..len(S_times). R_times holds a float
    for a failed attempt, math.inf for the confirmed one, None when the path
    ended before resolution. M_values has one entry per *failed* attempt
    (the running maximum that sets the next attempt level).
    """
    m0: float
    S_times: list = dc_field(default_factory=list)
    S_indices: list = dc_field(default_factory=list)
    R_times: list = dc_field(default_factory=list)
    R_indices: list = dc_field(default_factory=list)
    M_values: list = dc_field(default_factory=list)
    K: int | None = None
    censored: bool = False

    @property
    def success_time(self) -> float | None:
        return None if self.K is None else self.S_times[self.K - 1]

    @property
    def success_index(self) -> int | None:
        return None if self.K is None else self.S_indices[self.K - 1]


@dataclass
class RenewalDecomposition:
    """Nonretraction times of one path and the cycles between them."""
    tau_times: np.ndarray
    tau_indices: np.ndarray
    durations: np.ndarray
    drift_displacements: np.ndarray
    displacements: np.ndarray | None
    censored_tail: bool
    K_first: int | None

    @property
    def n_cycles(self) -> int:
        return len(self.durations)


def _extrema(record: PathRecord):
    """Per-step (low, high) envelopes used for crossing detection.

    Cached on the record; records are treated as immutable once built.
    """
    cache = getattr(record, "_extrema_cache", None)
    if cache is None:
        proj = record.drift_proj
        if record.bridge_enabled:
            cache = record.bridge_extrema()
        else:
            cache = (np.minimum(proj[:-1], proj[1:]),
                     np.maximum(proj[:-1], proj[1:]))
        record._extrema_cache = cache
    return cache


def _first_true(values, i0: int, predicate) -> int | None:
    """Index >= i0 of the first True of predicate(chunk), scanning lazily."""
    n = len(values)
    for lo in range(i0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        idx = np.flatnonzero(predicate(values[lo:hi]))
        if len(idx):
            return lo + int(idx[0])
    return None


def _from_index(record: PathRecord, from_time: float) -> int:
    idx = int(math.ceil(from_time / record.step - 1e-9))
    if idx < 0 or idx > record.n_steps:
        raise ValueError("from_time outside the recorded grid")
    return idx


def first_passage(record: PathRecord, level: float, direction: str = "up",
                  from_time: float = 0.0, refine: bool | None = None):
    """First time at/after from_time the projection crosses level.

    Returns the crossing time, or None when the record ends first. Detection
    honors the record's bridge mode; refine=True (default when the bridge is
    on) reports an interpolated within-step time, refine=False the grid time.
    """
    i0 = _from_index(record, from_time)
    kind, j = _cross_index(record, level, direction, i0)
    if kind == "none":
        return None
    if kind == "at_start":
        return i0 * record.step
    if refine is None:
        refine = bool(getattr(record, "bridge_enabled", False))
    if not refine:
        return (j + 1) * record.step
    y0, y1 = record.drift_proj[j], record.drift_proj[j + 1]
    crossed_at_grid = (y1 >= level) if direction == "up" else (y1 <= level)
    if crossed_at_grid and y1 != y0:
        frac = (level - y0) / (y1 - y0)
        frac = min(max(frac, 0.0), 1.0)
    else:
        frac = 0.5  # interior excursion found by the bridge
    return (j + frac) * record.step


def _cross_index(record: PathRecord, level: float, direction: str, i0: int):
    """("at_start", i0) | ("step", j) | ("none", None) for a level crossing."""
    proj = record.drift_proj
    low, high = _extrema(record)
    if direction == "up":
        if proj[i0] >= level:
            return "at_start", i0
        j = _first_true(high, i0, lambda c: c >= level)
    elif direction == "down":
        if proj[i0] <= level:
            return "at_start", i0
        j = _first_true(low, i0, lambda c: c <= level)
    else:
        raise ValueError("direction must be 'up' or 'down'")
    return ("none", None) if j is None else ("step", j)


def detect_D(record: PathRecord, start_level: float | None = None,
             policy: CensorPolicy | None = None, from_time: float = 0.0) -> DOutcome:
    """Resolve the retraction question from a start level.

    finite: the projection reached start_level - 1;
    confirmed_infinite: it climbed start_level + confirm_height first;
    censored: the record ended before either event.
    When both fire within one step the retraction wins (conservative).
    """
    if policy is None:
        raise ValueError("a CensorPolicy is required")
    i0 = _from_index(record, from_time)
    return _detect_D_idx(record, i0,
                         record.drift_proj[i0] if start_level is None else start_level,
                         policy)


def _detect_D_idx(record: PathRecord, i0: int, start_level: float,
                  policy: CensorPolicy) -> DOutcome:
    proj = record.drift_proj
    low, high = _extrema(record)
    level_d = start_level - 1.0
    level_u = start_level + policy.confirm_height
    if proj[i0] <= level_d:
        return DOutcome(D_FINITE, i0 * record.step, i0)
    if proj[i0] >= level_u:
        return DOutcome(D_CONFIRMED_INFINITE, i0 * record.step, i0)
    n = record.n_steps
    for lo in range(i0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        ev = (low[lo:hi] <= level_d) | (high[lo:hi] >= level_u)
        idx = np.flatnonzero(ev)
        if len(idx):
            j = lo + int(idx[0])
            if low[j] <= level_d:
                return DOutcome(D_FINITE, (j + 1) * record.step, j + 1)
            return DOutcome(D_CONFIRMED_INFINITE, (j + 1) * record.step, j + 1)
    return DOutcome(D_CENSORED, None, None)


def detect_ladder(record: PathRecord, r0: float, policy: CensorPolicy,
                  from_index: int = 0, k_max: int | None = None) -> LadderRecord:
    """Run the attempt ladder from a grid index until success or censoring.

    Attempt k climbs to (previous running max) + r0 + 1, then resolves its
    retraction question. The running maximum after a failed attempt is taken
    over the whole window since from_index, honoring bridge extrema.
    """
    proj = record.drift_proj
    low, high = _extrema(record)
    h = record.step
    ladder = LadderRecord(m0=float(proj[from_index]))
    m_prev = ladder.m0
    search_from = from_index
    k = 0
    while k_max is None or k < k_max:
        k += 1
        target = m_prev + r0 + 1.0
        kind, j = _cross_index_arrays(proj, high, target, search_from)
        if kind == "none":
            ladder.censored = True
            return ladder
        s_idx = j if kind == "at_start" else j + 1
        ladder.S_times.append(s_idx * h)
        ladder.S_indices.append(s_idx)
        outcome = _detect_D_idx(record, s_idx, float(proj[s_idx]), policy)
        if outcome.status == D_CENSORED:
            ladder.R_times.append(None)
            ladder.R_indices.append(None)
            ladder.censored = True
            return ladder
        if outcome.status == D_CONFIRMED_INFINITE:
            ladder.R_times.append(math.inf)
            ladder.R_indices.append(None)
            ladder.K = k
            return ladder
        r_idx = outcome.index
        ladder.R_times.append(outcome.time)
        ladder.R_indices.append(r_idx)
        m_k = _window_max(proj, high, from_index, r_idx)
        ladder.M_values.append(m_k)
        m_prev = m_k
        search_from = r_idx
    ladder.censored = True  # attempt budget exhausted without resolution
    return ladder


def _cross_index_arrays(proj, high, level, i0):
    if proj[i0] >= level:
        return "at_start", i0
    j = _first_true(high, i0, lambda c: c >= level)
    return ("none", None) if j is None else ("step", j)


def _window_max(proj, high, i0: int, i1: int) -> float:
    """Max of the projection over grid window [i0, i1], bridge-aware."""
    m = float(proj[i0])
    if i1 > i0:
        m = max(m, float(np.max(high[i0:i1])))
    return max(m, float(proj[i1]))


def extract_regenerations(record: PathRecord, r0: float,
                          policy: CensorPolicy) -> RenewalDecomposition:
    """All nonretraction times of a record and the cycles between them.

    Each emitted time is the success time of a fresh ladder started at the
    previous one; the trailing unresolved ladder is flagged as a censored
    tail and never emitted as a cycle.
    """
    taus = []
    base = 0
    k_first = None
    while True:
        ladder = detect_ladder(record, r0, policy, from_index=base)
        if ladder.K is None:
            break
        if k_first is None:
            k_first = ladder.K
        base = ladder.success_index
        taus.append(base)
    idx = np.asarray(taus, dtype=np.int64)
    times = idx * record.step
    durations = np.diff(idx) * record.step
    drift_disp = record.drift_proj[idx[1:]] - record.drift_proj[idx[:-1]] \
        if len(idx) > 1 else np.empty(0)
    disp = None
    if record.positions is not None and len(idx) > 1:
        disp = record.positions[idx[1:]] - record.positions[idx[:-1]]
    return RenewalDecomposition(
        tau_times=times, tau_indices=idx, durations=durations,
        drift_displacements=np.asarray(drift_disp),
        displacements=disp,
        censored_tail=True,
        K_first=k_first)


def nonretraction_violations(decomp: RenewalDecomposition, record: PathRecord) -> int:
    """Count emitted times whose tail dips more than 1 below its start.

    Zero by construction up to the policy's misclassification budget.
    """
    proj = record.drift_proj
    low, _ = _extrema(record)
    bad = 0
    for i in decomp.tau_indices:
        floor_level = proj[i] - 1.0
        rest = low[i:]
        if len(rest) and float(np.min(rest)) < floor_level:
            bad += 1
    return bad


@dataclass
class CycleIncrements:
    """Per-cycle time integrals of a product functional of the velocity."""
    xi: np.ndarray
    durations: np.ndarray
    displacements: np.ndarray | None
    complete: np.ndarray  # bool per cycle; incomplete cycles carry nan xi


def cycle_increments(decomp: RenewalDecomposition, record: PathRecord, fld,
                     functionals=(), offsets=()) -> CycleIncrements:
    """Left-endpoint Riemann sums of prod_p F_p(u(x(t_p + s))) per cycle.

    functionals: callables R^d -> R, vectorized over (n, d) inputs.
    offsets: one time offset per functional, snapped to the grid. A cycle
    whose offset-shifted window leaves the record is flagged incomplete.
    """
    if len(functionals) != len(offsets):
        raise ValueError("need one offset per functional")
    h = record.step
    off_idx = [int(round(t / h)) for t in offsets]
    for t, oi in zip(offsets, off_idx):
        if abs(oi * h - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"offset {t} is not aligned with the grid (h={h})")
    idx = decomp.tau_indices
    n_cycles = decomp.n_cycles
    xi = np.full(n_cycles, np.nan)
    complete = np.zeros(n_cycles, dtype=bool)
    max_off = max(off_idx, default=0)
    for k in range(n_cycles):
        i1, i2 = int(idx[k]), int(idx[k + 1])
        if i2 - 1 + max_off > record.n_steps:
            continue
        integrand = np.ones(i2 - i1)
        for F, oi in zip(functionals, off_idx):
            pts = record.positions[i1 + oi:i2 + oi]
            integrand = integrand * np.asarray(F(fld.velocity(pts)))
        xi[k] = h * float(np.sum(integrand))
        complete[k] = True
    return CycleIncrements(xi=xi, durations=decomp.durations.copy(),
                           displacements=None if decomp.displacements is None
                           else decomp.displacements.copy(),
                           complete=complete)


def write_cycles_csv(fh, decomps, dim: int, path_ids=None) -> None:
    """Emit one row per cycle plus a flagged row for each censored tail.

    Columns: path_id, k, tau_k, duration, disp_0.., drift_disp, censored.
    Estimators must ignore rows with censored = 1.
    """
    cols = ["path_id", "k", "tau_k", "duration"]
    cols += [f"disp_{i}" for i in range(dim)]
    cols += ["drift_disp", "censored"]
    fh.write(",".join(cols) + "\n")
    for p, dec in enumerate(decomps):
        pid = p if path_ids is None else path_ids[p]
        for k in range(dec.n_cycles):
            disp = dec.displacements[k] if dec.displacements is not None \
                else [math.nan] * dim
            row = [pid, k + 1, dec.tau_times[k], dec.durations[k],
                   *disp, dec.drift_displacements[k], 0]
            fh.write(",".join(_fmt(x) for x in row) + "\n")
        if dec.censored_tail and len(dec.tau_times):
            row = [pid, dec.n_cycles + 1, dec.tau_times[-1],
                   math.nan, *([math.nan] * dim), math.nan, 1]
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))

"""Synthetic stationary random velocity fields with verifiable structure.

The field is a constant mean velocity plus one compactly supported C1 bump
per lattice cell. Bump centers are jittered inside their cell with a margin
equal to the bump radius, so supports never touch a cell face: values in
distinct cells are driven by disjoint parameter sets, and the dependence
range is the cell diameter. A random lattice offset (derived from the seed)
stationarizes the construction. All per-cell parameters come from
counter-based streams, so the field is lazily evaluable anywhere with no
global state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import streams
from .streams import TAG_CELL, TAG_GRID_OFFSET

# max of |d/dr (1 - (r/rho)^2)^2| over r, for rho = 1
_QUARTIC_SLOPE_MAX = 8.0 / (3.0 * math.sqrt(3.0))

PROFILES = ("quartic",)


@dataclass(frozen=True)
class FieldSpec:
    """Parameters of the jittered-lattice bump field.

    dim: spatial dimension d >= 1
    mean_velocity: mean drift vector (length/time)
    bump_amplitude_cap: sup norm of the fluctuation part (length/time)
    bump_radius: support radius of one bump (length)
    cell_side: lattice cell side, >= 2 * bump_radius (length)
    profile: radial bump shape identifier (only "quartic" is shipped)
    """

    dim: int
    mean_velocity: tuple
    bump_amplitude_cap: float
    bump_radius: float
    cell_side: float
    profile: str = "quartic"

    def __post_init__(self):
        object.__setattr__(self, "mean_velocity",
                           tuple(float(v) for v in np.atleast_1d(self.mean_velocity)))
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if len(self.mean_velocity) != self.dim:
            raise ValueError("mean_velocity length must equal dim")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; available: {PROFILES}")
        if self.bump_radius <= 0:
            raise ValueError("bump_radius must be > 0")
        if self.cell_side < 2 * self.bump_radius:
            raise ValueError(
                "cell_side must be >= 2 * bump_radius so each bump stays inside "
                "its own cell (finite dependence range would otherwise fail)")
        if self.bump_amplitude_cap < 0:
            raise ValueError("bump_amplitude_cap must be >= 0")
        if self.bump_amplitude_cap >= self.speed:
            raise ValueError(
                "bump_amplitude_cap must be < |mean_velocity|: the mean drift "
                "has to dominate its fluctuations")

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.mean_velocity))

    @property
    def vhat(self) -> np.ndarray:
        """Unit vector along the mean drift."""
        return np.asarray(self.mean_velocity) / self.speed

    @property
    def delta(self) -> float:
        """Guaranteed floor of u(x) . vhat: |v| - amplitude cap, > 0."""
        return self.speed - self.bump_amplitude_cap

    @property
    def dependence_range(self) -> float:
        """Cell diameter: points farther apart never share a lattice cell."""
        return self.cell_side * math.sqrt(self.dim)

    @property
    def gradient_bound(self) -> float:
        """sup operator norm of the fluctuation gradient (analytic)."""
        return self.bump_amplitude_cap * _QUARTIC_SLOPE_MAX / self.bump_radius


def _fold_cells(seed, cells):
    """Stream key for each cell; cells has shape (..., dim)."""
    key = streams.derive_key(seed, TAG_CELL)
    for j in range(cells.shape[-1]):
        key = streams.fold_word(key, cells[..., j])
    return key


def cell_provenance(master_seed, cell) -> tuple:
    """Exact address of the parameter draws of one cell.

    Distinct cells have distinct provenance tuples by construction, which is
    the disjointness behind the finite dependence range.
    """
    return (int(master_seed) & 0xFFFFFFFFFFFFFFFF, TAG_CELL) + tuple(int(c) for c in cell)


def _cell_parameters(spec: FieldSpec, seed, cells):
    """(center offset within cell, amplitude vector) for each cell.

    seed broadcasts against cells[..., :]; every output element is a pure
    function of (seed, cell coordinates).
    """
    d = spec.dim
    key = _fold_cells(seed, cells)
    # words 0..d-1: center jitter; word d: radius; words d+1..: normal pairs
    jitter = np.stack(
        [streams.uniform_from(streams.words_at(key, j)) for j in range(d)], axis=-1)
    rel_center = spec.bump_radius + jitter * (spec.cell_side - 2 * spec.bump_radius)

    u_r = streams.uniform_open_from(streams.words_at(key, d))
    radius = spec.bump_amplitude_cap * u_r ** (1.0 / d)

    npairs = (d + 1) // 2
    gauss = []
    for p in range(npairs):
        u1 = streams.uniform_open_from(streams.words_at(key, d + 1 + 2 * p))
        u2 = streams.uniform_from(streams.words_at(key, d + 2 + 2 * p))
        r = np.sqrt(-2.0 * np.log(u1))
        gauss.append(r * np.cos(2.0 * math.pi * u2))
        gauss.append(r * np.sin(2.0 * math.pi * u2))
    g = np.stack(gauss[:d], axis=-1)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    scale = np.where(norm > 0, radius[..., None] / np.where(norm > 0, norm, 1.0), 0.0)
    amplitude = g * scale
    return rel_center, amplitude


def grid_offset_for_seed(spec: FieldSpec, seed) -> np.ndarray:
    """Stationarizing lattice shift, uniform in [0, cell_side)^d."""
    key = streams.derive_key(seed, TAG_GRID_OFFSET)
    u = np.stack(
        [streams.uniform_from(streams.words_at(key, j)) for j in range(spec.dim)], axis=-1)
    return u * spec.cell_side


@dataclass(frozen=True, eq=False)
class FieldRealization:
    """One frozen sample of the random field, evaluable anywhere.

    Immutable and safe to share across concurrent evaluators; every method
    is a pure function of (spec, master_seed, query point).
    """

    spec: FieldSpec
    master_seed: int
    grid_offset: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & 0xFFFFFFFFFFFFFFFF)
        object.__setattr__(
            self, "grid_offset", grid_offset_for_seed(self.spec, self.master_seed))

    def cell_of(self, x) -> np.ndarray:
        """Integer lattice coordinates of the cell containing x."""
        x = np.asarray(x, dtype=np.float64)
        return np.floor((x - self.grid_offset) / self.spec.cell_side).astype(np.int64)

    def bump_of_cell(self, cells):
        """(absolute center, amplitude vector) of the bump in each cell."""
        cells = np.asarray(cells, dtype=np.int64)
        rel, amp = _cell_parameters(self.spec, self.master_seed, cells)
        origin = self.grid_offset + cells * self.spec.cell_side
        return origin + rel, amp

    def provenance_of(self, x) -> tuple:
        """Parameter provenance of the cell that drives the value at x."""
        return cell_provenance(self.master_seed, self.cell_of(x))

    def velocity(self, x) -> np.ndarray:
        """u(x); accepts shape (d,) or (n, d), returns the same shape."""
        return eval_velocity(self, x)

    def gradient(self, x) -> np.ndarray:
        """du_i/dx_j; shape (d, d) or (n, d, d)."""
        return eval_gradient(self, x)

    def divergence(self, x) -> np.ndarray:
        """sum_i du_i/dx_i; generically nonzero: the field is compressible."""
        return divergence(self, x)


def realize(spec: FieldSpec, seed: int) -> FieldRealization:
    """Draw one field realization, reproducible from (spec, seed)."""
    return FieldRealization(spec, seed)


def _bump_terms(spec, seed, offset, x):
    """phi(|x - center|) and amplitude for the cell of each point x (..., d)."""
    cells = np.floor((x - offset) / spec.cell_side).astype(np.int64)
    rel, amp = _cell_parameters(spec, seed, cells)
    center = offset + cells * spec.cell_side + rel
    diff = x - center
    s = np.sum(diff * diff, axis=-1) / (spec.bump_radius ** 2)
    inside = s < 1.0
    one_minus = np.where(inside, 1.0 - s, 0.0)
    phi = one_minus ** 2
    return phi, one_minus, diff, amp


def velocity_keyed(spec: FieldSpec, seed, offset, x) -> np.ndarray:
    """Velocity at points x for realization(s) addressed by seed/offset.

    seed may be an array (one independent realization per row of x), which
    is how path ensembles sample fresh environments in lockstep.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(spec.mean_velocity)
    if spec.bump_amplitude_cap == 0.0:
        return np.broadcast_to(v, x.shape).copy()
    phi, _, _, amp = _bump_terms(spec, seed, offset, x)
    return v + amp * phi[..., None]


def gradient_keyed(spec: FieldSpec, seed, offset, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if spec.bump_amplitude_cap == 0.0:
        return np.zeros(x.shape + (spec.dim,))
    _, one_minus, diff, amp = _bump_terms(spec, seed, offset, x)
    # grad phi = -(4/rho^2) * (1 - (r/rho)^2) * (x - center); C1 across r = rho
    coef = (-4.0 / spec.bump_radius ** 2) * one_minus
    return amp[..., :, None] * (coef[..., None, None] * diff[..., None, :])


def eval_velocity(fld: FieldRealization, x) -> np.ndarray:
    """u(x) = mean velocity + (cell bump amplitude) * phi(|x - center|)."""
    return velocity_keyed(fld.spec, fld.master_seed, fld.grid_offset, x)


def eval_gradient(fld: FieldRealization, x) -> np.ndarray:
    """Analytic Jacobian of the velocity field at x."""
    return gradient_keyed(fld.spec, fld.master_seed, fld.grid_offset, x)


def divergence(fld: FieldRealization, x) -> np.ndarray:
    """Trace of the velocity Jacobian at x."""
    g = eval_gradient(fld, x)
    return np.trace(g, axis1=-2, axis2=-1)


def empirical_report(fld: FieldRealization, n_points: int = 100_000,
                     check_seed: int = 7, box_cells: int = 50,
                     n_gradient: int = 1000, fd_step: float = 1e-5) -> dict:
    """Empirical invariant suite over uniform points in a large box.

    Checks the amplitude cap, the drift floor, the analytic gradient against
    central finite differences, the spatial mean against the nominal mean
    velocity (3 standard errors), and provenance disjointness across cells.
    """
    spec = fld.spec
    box = box_cells * spec.cell_side
    pts = streams.uniform_block(streams.derive_key(check_seed, 0xC0), 0,
                                n_points * spec.dim).reshape(n_points, spec.dim) * box

    u = fld.velocity(pts)
    fluct = u - np.asarray(spec.mean_velocity)
    amp_violations = int(np.sum(np.linalg.norm(fluct, axis=-1) > spec.bump_amplitude_cap))
    drift_violations = int(np.sum(u @ spec.vhat < spec.delta))

    mean = u.mean(axis=0)
    se = u.std(axis=0, ddof=1) / math.sqrt(n_points)
    mean_ok = bool(np.all(np.abs(mean - spec.mean_velocity) <= 3.0 * np.maximum(se, 1e-15)))

    gpts = pts[:n_gradient]
    grad = fld.gradient(gpts)
    fd = np.empty_like(grad)
    for j in range(spec.dim):
        e = np.zeros(spec.dim)
        e[j] = fd_step
        fd[..., j] = (fld.velocity(gpts + e) - fld.velocity(gpts - e)) / (2 * fd_step)
    num = np.linalg.norm((grad - fd).reshape(n_gradient, -1), axis=-1)
    den = np.maximum(np.linalg.norm(fd.reshape(n_gradient, -1), axis=-1), 1e-8)
    grad_rel_err = float(np.max(num / den))

    # two points in distinct cells must have distinct parameter provenance
    cells = fld.cell_of(pts[:1000])
    uniq = {tuple(int(c) for c in row) for row in cells}
    prov = {cell_provenance(fld.master_seed, c) for c in uniq}
    provenance_ok = len(prov) == len(uniq)

    return {
        "n_points": n_points,
        "amplitude_cap_violations": amp_violations,
        "drift_floor_violations": drift_violations,
        "spatial_mean": mean.tolist(),
        "spatial_mean_se": se.tolist(),
        "spatial_mean_ok": mean_ok,
        "gradient_max_rel_err": grad_rel_err,
        "gradient_ok": grad_rel_err <= 1e-4,
        "provenance_disjoint": provenance_ok,
        "conditions": {
            "mean_dominates_fluctuations": amp_violations == 0 and spec.delta > 0,
            "finite_dependence_range": provenance_ok,
            "c1_regularity": grad_rel_err <= 1e-4,
        },
    }

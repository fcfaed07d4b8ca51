"""Euler-Maruyama integration of the tracer equation with recorded noise.

The update is x_{i+1} = x_i + u(x_i) h + sqrt(kappa) dW_i, evaluated in a
fixed operation order so the identity can be re-checked bit-for-bit on any
stored path. Subtracting the drift term from stored positions recovers the
driving Brownian increments exactly (up to float rounding), which is the
discrete form of reading the noise back out of the trajectory.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .field import FieldRealization
from .streams import NoiseStream


@dataclass(frozen=True)
class SimParams:
    """Integrator parameters.

    step: time step h > 0
    kappa: molecular diffusivity (noise intensity), > 0; the zero-noise
        transport regime is excluded
    horizon: latest simulated time
    bridge_correction: sample within-step bridge extrema for level-crossing
        detection (off by default; analytic-oracle tests switch it on)
    """

    step: float
    horizon: float
    kappa: float = 1.0
    bridge_correction: bool = False

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0 (pure transport is out of scope)")
        if self.step > self.horizon:
            raise ValueError("step must not exceed horizon")

    @property
    def n_steps_max(self) -> int:
        return int(math.floor(self.horizon / self.step + 1e-9))


def euler_update(x, u, step: float, sqrt_kappa: float, dw):
    """One explicit Euler step; the canonical operation order."""
    return (x + u * step) + sqrt_kappa * dw


class PathRecord:
    """A discretized trajectory with its driving noise.

    positions has shape (n_steps+1, d); noise, when stored, has shape
    (n_steps, d); drift_proj caches vhat . position. stop_reason is
    "predicate" when the caller's stopping rule fired, "horizon" when the
    time budget ran out first.
    """

    STOP_PREDICATE = "predicate"
    STOP_HORIZON = "horizon"

    def __init__(self, positions, step, kappa, vhat, noise=None,
                 master_seed=None, path_index=None, stop_reason=None,
                 drift_proj=None, bridge_enabled=False):
        if positions is None and drift_proj is None:
            raise ValueError("need positions or at least a drift projection")
        self.positions = None if positions is None \
            else np.asarray(positions, dtype=np.float64)
        if self.positions is not None and self.positions.ndim != 2:
            raise ValueError("positions must have shape (n_steps+1, dim)")
        self.step = float(step)
        self.kappa = float(kappa)
        self.vhat = np.asarray(vhat, dtype=np.float64)
        self.noise = None if noise is None else np.asarray(noise, dtype=np.float64)
        self.master_seed = master_seed
        self.path_index = path_index
        self.stop_reason = stop_reason
        self.drift_proj = self.positions @ self.vhat if drift_proj is None \
            else np.asarray(drift_proj, dtype=np.float64)
        self.bridge_enabled = bool(bridge_enabled)
        if self.noise is not None and len(self.noise) != len(self.drift_proj) - 1:
            raise ValueError("noise must hold one increment per step")
        self._bridge_cache = None

    @property
    def dim(self) -> int:
        return len(self.vhat)

    @property
    def n_steps(self) -> int:
        return len(self.drift_proj) - 1

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.drift_proj)) * self.step

    def stream(self) -> NoiseStream:
        if self.master_seed is None or self.path_index is None:
            raise ValueError("path has no stream identity (hand-built record?)")
        return NoiseStream(self.master_seed, self.path_index, self.dim, self.step)

    def bridge_extrema(self):
        """Sampled within-step minima/maxima of the projected path.

        Returns (low, high), each of shape (n_steps,). low[i] <= min endpoint
        and high[i] >= max endpoint of step i by construction. The two are
        sampled from their marginal bridge laws independently of each other,
        which is exact per level query but not jointly.
        """
        if self._bridge_cache is None:
            u_lo, u_hi = self.stream().bridge_uniforms(0, self.n_steps)
            y0 = self.drift_proj[:-1]
            y1 = self.drift_proj[1:]
            self._bridge_cache = bridge_extrema_from_uniforms(
                y0, y1, self.kappa * self.step, u_lo, u_hi)
        return self._bridge_cache


def bridge_extrema_from_uniforms(y0, y1, var, u_lo, u_hi):
    """Sample min and max of a Brownian bridge between y0 and y1.

    var is the variance accumulated over the step (kappa * h for the drift
    projection). Uses the standard inverse-law formulas; constant drift
    inside a step is absorbed by conditioning on the endpoints.
    """
    gap2 = (y1 - y0) ** 2
    low = 0.5 * (y0 + y1 - np.sqrt(gap2 - 2.0 * var * np.log(u_lo)))
    high = 0.5 * (y0 + y1 + np.sqrt(gap2 - 2.0 * var * np.log(u_hi)))
    return low, high


def step(x, fld: FieldRealization, params: SimParams, noise_increment):
    """Advance one Euler step from x with a caller-supplied increment."""
    x = np.asarray(x, dtype=np.float64)
    u = fld.velocity(x)
    return euler_update(x, u, params.step, math.sqrt(params.kappa), noise_increment)


def stop_never(record, i) -> bool:
    return False


def stop_at_projection(level: float):
    """Stop when vhat . position first reaches level."""
    def predicate(record, i):
        return record.drift_proj[i] >= level
    return predicate


def simulate(fld: FieldRealization, params: SimParams, x0, stop,
             master_seed: int, path_index: int = 0,
             store_noise: bool = True) -> PathRecord:
    """Integrate one path until stop(record, i) or the horizon.

    stop is called after every appended grid point with the record-so-far
    and the index of the newest point; it must be a pure function of the
    record. The noise stream is consumed deterministically: the record is a
    pure function of (field, params, x0, master_seed, path_index).
    """
    d = fld.spec.dim
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (d,):
        raise ValueError(f"x0 must have shape ({d},)")
    stream = NoiseStream(master_seed, path_index, d, params.step)
    sqrt_kappa = math.sqrt(params.kappa)
    n_max = params.n_steps_max

    cap = min(n_max, 1024)
    positions = np.empty((cap + 1, d))
    positions[0] = x0
    record = PathRecord(positions[:1], params.step, params.kappa, fld.spec.vhat,
                        master_seed=master_seed, path_index=path_index,
                        bridge_enabled=params.bridge_correction)

    if stop(record, 0):
        record.stop_reason = PathRecord.STOP_PREDICATE
        record.noise = np.empty((0, d)) if store_noise else None
        return record

    proj = np.empty(cap + 1)
    proj[0] = record.drift_proj[0]
    noise = np.empty((cap, d)) if store_noise else None
    vhat = fld.spec.vhat

    i = 0
    stop_reason = PathRecord.STOP_HORIZON
    chunk = 256
    while i < n_max:
        hi = min(i + chunk, n_max)
        dws = stream.increments(i, hi)
        for k in range(hi - i):
            if i + 1 > cap:
                cap = min(n_max, 2 * cap)
                positions = _grow(positions, cap + 1)
                proj = _grow(proj, cap + 1)
                if noise is not None:
                    noise = _grow(noise, cap)
            dw = dws[k]
            u = fld.velocity(positions[i])
            positions[i + 1] = euler_update(positions[i], u, params.step, sqrt_kappa, dw)
            proj[i + 1] = positions[i + 1] @ vhat
            if noise is not None:
                noise[i] = dw
            i += 1
            record.positions = positions[:i + 1]
            record.drift_proj = proj[:i + 1]
            if stop(record, i):
                stop_reason = PathRecord.STOP_PREDICATE
                break
        if stop_reason == PathRecord.STOP_PREDICATE:
            break

    record.positions = positions[:i + 1].copy()
    record.drift_proj = proj[:i + 1].copy()
    record.noise = noise[:i].copy() if noise is not None else None
    record.stop_reason = stop_reason
    return record


def _grow(arr, n):
    out = np.empty((n,) + arr.shape[1:])
    out[:len(arr)] = arr
    return out


def extend_record(record: PathRecord, fld: FieldRealization, n_more: int) -> PathRecord:
    """Continue a recorded path n_more steps with its own noise stream.

    The result is bit-identical to having simulated the longer path in the
    first place (counter-based noise is addressed by step index).
    """
    stream = record.stream()
    d = record.dim
    n0 = record.n_steps
    sqrt_kappa = math.sqrt(record.kappa)
    positions = _grow(record.positions, n0 + n_more + 1)
    dws = stream.increments(n0, n0 + n_more)
    for k in range(n_more):
        i = n0 + k
        u = fld.velocity(positions[i])
        positions[i + 1] = euler_update(positions[i], u, record.step, sqrt_kappa, dws[k])
    noise = None
    if record.noise is not None:
        noise = _grow(record.noise, n0 + n_more)
        noise[n0:] = dws
    return PathRecord(positions, record.step, record.kappa, record.vhat, noise=noise,
                      master_seed=record.master_seed, path_index=record.path_index,
                      stop_reason=record.stop_reason,
                      bridge_enabled=record.bridge_enabled)


class PathFieldMismatchError(RuntimeError):
    """Reconstructed noise disagrees with the stored noise: the path was not
    produced by this field/parameter combination."""


def reconstruct_brownian(record: PathRecord, fld: FieldRealization,
                         check: bool = False, atol: float = 1e-9) -> np.ndarray:
    """Recover driving increments: (x_{i+1} - x_i - u(x_i) h) / sqrt(kappa).

    The quadrature is the same left-endpoint rule as the integrator, so the
    result equals the stored noise up to float rounding. With check=True the
    agreement is asserted against the stored increments.
    """
    u = fld.velocity(record.positions[:-1])
    inc = (record.positions[1:] - (record.positions[:-1] + u * record.step))
    inc /= math.sqrt(record.kappa)
    if check:
        if record.noise is None:
            raise ValueError("record stores no noise to check against")
        err = float(np.max(np.abs(inc - record.noise))) if len(inc) else 0.0
        if err > atol:
            raise PathFieldMismatchError(
                f"noise reconstruction off by {err:.3e} (> {atol:.1e}); "
                "field/path pairing is wrong")
    return inc


_DUMP_MAGIC = b"TRCRPATH"


def dump_path(record: PathRecord, fh) -> None:
    """Binary dump: magic, uint32 dim, float64 step, uint64 n_steps, then
    positions row-major float64; everything little-endian."""
    fh.write(_DUMP_MAGIC)
    fh.write(struct.pack("<Id Q", record.dim, record.step, record.n_steps))
    fh.write(record.positions.astype("<f8").tobytes(order="C"))


def load_path(fh, vhat, kappa: float = 1.0) -> PathRecord:
    """Read a dump_path file back into a (noise-free) PathRecord."""
    magic = fh.read(len(_DUMP_MAGIC))
    if magic != _DUMP_MAGIC:
        raise ValueError("not a tracer path dump")
    dim, h, n = struct.unpack("<Id Q", fh.read(struct.calcsize("<Id Q")))
    buf = fh.read((n + 1) * dim * 8)
    positions = np.frombuffer(buf, dtype="<f8").reshape(n + 1, dim)
    return PathRecord(positions, h, kappa, vhat)

"""Lockstep vectorized evolution of tracer path ensembles.

Each path owns an independent environment realization and an independent
noise stream, both addressed by (master_seed, path index, step index), so
results do not depend on how the ensemble is chunked across workers. The
walker exposes per-step projection endpoints and, when bridge correction is
on, sampled within-step extrema of the projected path; estimators build
their event logic on top of these arrays.
"""

from __future__ import annotations

import math

import numpy as np

from . import streams
from .field import FieldSpec, velocity_keyed, grid_offset_for_seed
from .sde import SimParams, euler_update, bridge_extrema_from_uniforms
from .streams import (TAG_BRIDGE_HIGH, TAG_BRIDGE_LOW, TAG_GRID_OFFSET,
                      TAG_NOISE, derive_key, field_seed_for_path)


def grid_offsets_for_seeds(spec: FieldSpec, seeds) -> np.ndarray:
    """Vectorized stationarizing shifts, one per seed; shape (n, d)."""
    key = derive_key(seeds, TAG_GRID_OFFSET)
    u = np.stack([streams.uniform_from(streams.words_at(key, j))
                  for j in range(spec.dim)], axis=-1)
    return u * spec.cell_side


class ProjectionWalker:
    """n paths advanced in lockstep through per-path environments.

    shared_environment=True reuses one field realization for every path
    (still with independent noise); the default draws a fresh environment
    per path, which makes per-path statistics independent samples.
    """

    def __init__(self, spec: FieldSpec, params: SimParams, n_paths: int,
                 master_seed: int, x0=None, shared_environment: bool = False,
                 path_offset: int = 0):
        self.spec = spec
        self.params = params
        self.n = int(n_paths)
        self.master_seed = int(master_seed)
        idx = np.arange(path_offset, path_offset + self.n)
        if shared_environment:
            fseed = field_seed_for_path(master_seed, -1)
            self.field_seeds = np.broadcast_to(fseed, (self.n,)).copy()
        else:
            self.field_seeds = field_seed_for_path(master_seed, idx)
        self.offsets = grid_offsets_for_seeds(spec, self.field_seeds)
        self._noise_keys = derive_key(master_seed, TAG_NOISE, idx)
        self._lo_keys = derive_key(master_seed, TAG_BRIDGE_LOW, idx)
        self._hi_keys = derive_key(master_seed, TAG_BRIDGE_HIGH, idx)
        self.x = np.zeros((self.n, spec.dim)) if x0 is None \
            else np.tile(np.asarray(x0, dtype=np.float64), (self.n, 1))
        self.vhat = spec.vhat
        self.proj = self.x @ self.vhat
        self.t_index = 0
        self._sqrt_kappa = math.sqrt(params.kappa)
        self._bridge_var = params.kappa * params.step

    def advance(self, active):
        """Advance the active subset one step; returns per-step arrays.

        active: index array into the ensemble. Returns (y0, y1, low, high)
        for those rows; low/high are the sampled bridge extrema when bridge
        correction is on, otherwise elementwise min/max of the endpoints.
        Rows not listed in active keep their state (their stream addresses
        are simply never consumed).
        """
        t = self.t_index
        d = self.spec.dim
        x = self.x[active]
        u = velocity_keyed(self.spec, self.field_seeds[active],
                           self.offsets[active], x)
        z = streams.normal_block(self._noise_keys[active], t * d, d)
        dw = math.sqrt(self.params.step) * z
        x1 = euler_update(x, u, self.params.step, self._sqrt_kappa, dw)
        y0 = self.proj[active]
        y1 = x1 @ self.vhat
        if self.params.bridge_correction:
            u_lo = streams.uniform_open_from(streams.words_at(self._lo_keys[active], t))
            u_hi = streams.uniform_open_from(streams.words_at(self._hi_keys[active], t))
            low, high = bridge_extrema_from_uniforms(y0, y1, self._bridge_var, u_lo, u_hi)
        else:
            low = np.minimum(y0, y1)
            high = np.maximum(y0, y1)
        self.x[active] = x1
        self.proj[active] = y1
        self.t_index = t + 1
        return y0, y1, low, high

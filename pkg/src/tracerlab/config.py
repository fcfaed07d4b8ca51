"""Flat sectioned key-value run configuration.

A run config fully determines every output bit of an experiment: field
spec, integrator parameters, censoring policy, estimator selection with
per-estimator knobs, master seed and output layout. The format is INI-style
text with sections [field], [sim], [censor], [estimators], [output];
estimator knobs use dotted keys (gamma.n_paths = 10000). Unknown keys are
rejected with their key path, and serialize/parse round-trips losslessly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field as dc_field

from .field import FieldSpec
from .renewal import CensorPolicy
from .sde import SimParams


class ConfigError(ValueError):
    """Invalid configuration; .errors lists (key_path, reason) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{k}: {msg}" for k, msg in self.errors)
        super().__init__(f"invalid config: {lines}")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str):
    return tuple(float(tok) for tok in s.replace(",", " ").split())


def _parse_names(s: str):
    return tuple(tok.strip() for tok in s.split(",") if tok.strip())


# (type, default); None default means "required unless another key covers it"
_FIELD_KEYS = {
    "dim": (int, 2),
    "mean_velocity": (_parse_floats, (1.0, 0.0)),
    "alpha": (float, 0.5),
    "rho": (float, 1.0),
    "cell_side": (float, 2.5),
    "profile": (str, "quartic"),
}
_SIM_KEYS = {
    "step": (float, 0.01),
    "kappa": (float, 1.0),
    "horizon": (float, 400.0),
    "bridge": (_parse_bool, False),
    "master_seed": (int, 20240),
    "n_paths": (int, 32),
}
_CENSOR_KEYS = {
    "budget": (float, 1e-6),
    "confirm_height": (float, None),  # explicit height overrides the budget
}
_OUTPUT_KEYS = {
    "directory": (str, "out"),
    "formats": (_parse_names, ("json", "csv", "plotdata")),
}

ESTIMATORS = ("gamma", "max_mean", "backtrack", "hitting", "restart",
              "drift_lln", "drift_renewal", "cross_check", "stationarity",
              "lagrangian")

_ESTIMATOR_KEYS = {
    "gamma.n_paths": (int, 2000),
    "max_mean.n_paths": (int, 4000),
    "backtrack.n_paths": (int, 20000),
    "backtrack.levels": (_parse_floats, (2.0, 4.0)),
    "hitting.n_paths": (int, 2000),
    "hitting.m_factor": (float, 10.0),
    "restart.n_paths": (int, 5000),
    "restart.k_max": (int, 4),
    "drift_lln.n_paths": (int, 100),
    "drift_lln.T": (float, 100.0),
    "drift_renewal.n_paths": (int, 16),
    "drift_renewal.burn_in": (int, 5),
    "drift_renewal.n_cycles": (int, 500),
    "stationarity.reps": (int, 50),
    "stationarity.burn_in": (int, 20),
    "stationarity.window": (int, 40),
    "stationarity.min_fraction": (float, 0.9),
    "lagrangian.n_paths": (int, 16),
    "lagrangian.n_cycles": (int, 300),
    "lagrangian.burn_in": (int, 5),
}


@dataclass(frozen=True)
class RunConfig:
    """One experiment, fully reproducible from this object."""
    field: FieldSpec
    sim: SimParams
    master_seed: int
    sim_n_paths: int
    censor_budget: float
    censor_height: float | None
    run: tuple
    knobs: dict
    output_dir: str
    formats: tuple

    def policy(self) -> CensorPolicy:
        """Censoring policy resolved against this field and horizon."""
        if self.censor_height is not None:
            return CensorPolicy(self.censor_height, self.sim.horizon)
        return CensorPolicy.from_budget(self.censor_budget, self.field.delta,
                                        self.field.dim, self.sim.horizon,
                                        self.sim.kappa)

    def knob(self, name: str):
        return self.knobs[name]

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return serialize_config(self) == serialize_config(other)


def _read_section(cp, name, schema, errors, out):
    seen = dict(cp.items(name)) if cp.has_section(name) else {}
    for key, raw in seen.items():
        if key not in schema:
            errors.append((f"{name}.{key}", "unknown key"))
    for key, (typ, default) in schema.items():
        if key in seen:
            try:
                out[key] = typ(seen[key])
            except (ValueError, TypeError) as e:
                errors.append((f"{name}.{key}", f"bad value {seen[key]!r} ({e})"))
                out[key] = default
        else:
            out[key] = default


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate config text; raises ConfigError with key paths.

    overrides maps dotted keys ("field.alpha") to raw string values and is
    applied before validation (the CLI's one-to-one flag override).
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError([("<syntax>", str(e))])
    errors = []
    for sect in cp.sections():
        if sect not in ("field", "sim", "censor", "estimators", "output"):
            errors.append((sect, "unknown section"))
    if overrides:
        for dotted, raw in overrides.items():
            sect, _, key = dotted.partition(".")
            if sect not in ("field", "sim", "censor", "estimators", "output") or not key:
                errors.append((dotted, "override must be section.key=value"))
                continue
            if not cp.has_section(sect):
                cp.add_section(sect)
            cp.set(sect, key, raw)

    fvals, svals, cvals, ovals = {}, {}, {}, {}
    _read_section(cp, "field", _FIELD_KEYS, errors, fvals)
    _read_section(cp, "sim", _SIM_KEYS, errors, svals)
    _read_section(cp, "censor", _CENSOR_KEYS, errors, cvals)
    _read_section(cp, "output", _OUTPUT_KEYS, errors, ovals)

    run = tuple()
    knobs = {k: v for k, (_, v) in _ESTIMATOR_KEYS.items()}
    if cp.has_section("estimators"):
        for key, raw in cp.items("estimators"):
            if key == "run":
                run = _parse_names(raw)
                for name in run:
                    if name not in ESTIMATORS:
                        errors.append((f"estimators.run", f"unknown estimator {name!r}"))
            elif key in _ESTIMATOR_KEYS:
                typ, _ = _ESTIMATOR_KEYS[key]
                try:
                    knobs[key] = typ(raw)
                except (ValueError, TypeError) as e:
                    errors.append((f"estimators.{key}", f"bad value {raw!r} ({e})"))
            else:
                errors.append((f"estimators.{key}", "unknown key"))

    fspec = None
    if not errors:
        try:
            fspec = FieldSpec(dim=fvals["dim"], mean_velocity=fvals["mean_velocity"],
                              bump_amplitude_cap=fvals["alpha"],
                              bump_radius=fvals["rho"],
                              cell_side=fvals["cell_side"],
                              profile=fvals["profile"])
        except ValueError as e:
            errors.append(("field", str(e)))
        try:
            sim = SimParams(step=svals["step"], horizon=svals["horizon"],
                            kappa=svals["kappa"], bridge_correction=svals["bridge"])
        except ValueError as e:
            errors.append(("sim", str(e)))
        if cvals["budget"] is not None and not (0 < cvals["budget"] < 1):
            errors.append(("censor.budget", "must be in (0, 1)"))
    if errors:
        raise ConfigError(errors)
    return RunConfig(field=fspec, sim=sim, master_seed=svals["master_seed"],
                     sim_n_paths=svals["n_paths"],
                     censor_budget=cvals["budget"], censor_height=cvals["confirm_height"],
                     run=run, knobs=knobs,
                     output_dir=ovals["directory"], formats=ovals["formats"])


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) equals cfg."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["field"] = {
        "dim": str(cfg.field.dim),
        "mean_velocity": ", ".join(repr(v) for v in cfg.field.mean_velocity),
        "alpha": repr(cfg.field.bump_amplitude_cap),
        "rho": repr(cfg.field.bump_radius),
        "cell_side": repr(cfg.field.cell_side),
        "profile": cfg.field.profile,
    }
    cp["sim"] = {
        "step": repr(cfg.sim.step),
        "kappa": repr(cfg.sim.kappa),
        "horizon": repr(cfg.sim.horizon),
        "bridge": str(cfg.sim.bridge_correction).lower(),
        "master_seed": str(cfg.master_seed),
        "n_paths": str(cfg.sim_n_paths),
    }
    censor = {"budget": repr(cfg.censor_budget)}
    if cfg.censor_height is not None:
        censor["confirm_height"] = repr(cfg.censor_height)
    cp["censor"] = censor
    est = {}
    if cfg.run:
        est["run"] = ", ".join(cfg.run)
    for key in sorted(cfg.knobs):
        val = cfg.knobs[key]
        if isinstance(val, tuple):
            est[key] = ", ".join(repr(v) for v in val)
        elif isinstance(val, float):
            est[key] = repr(val)
        else:
            est[key] = str(val)
    cp["estimators"] = est
    cp["output"] = {
        "directory": cfg.output_dir,
        "formats": ", ".join(cfg.formats),
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()

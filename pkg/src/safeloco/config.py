"""Scenario files: flat INI, one section per parameter bundle.

Every key is optional and falls back to the dataclass default.  Unknown
sections or keys are errors so that a typo never silently runs the default.
Boxes get one section each, ``[box <name>]``, in the order they appear.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

from safeloco import ParameterError
from safeloco.estimator import ForceBlend
from safeloco.hlip import HlipParams
from safeloco.planner import PlannerLimits
from safeloco.world import (MODES, BoxBody, DisturbanceScript, ProbeConfig, WorldConfig)


class ConfigError(ParameterError):
    """Unreadable, malformed or inconsistent scenario file."""


MODE_FLAGS = {
    "baseline": dict(use_filter=False, use_dob=False, use_estimation=False),
    "cbf": dict(use_filter=True, use_dob=False, use_estimation=True),
    "cbf_dob": dict(use_filter=True, use_dob=True, use_estimation=True),
}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    mode: str
    world: WorldConfig
    plots: bool = False
    sweep_seeds: int = 1      # a sweep expands the scenario over seed, seed+1, ...

    @property
    def seed(self) -> int:
        return self.world.seed

    def with_mode(self, mode: str) -> "ScenarioConfig":
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        return replace(self, mode=mode, world=replace(self.world, **MODE_FLAGS[mode]))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, world=replace(self.world, seed=int(seed)))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _vec2(text: str) -> tuple[float, float]:
    v = _floats(text)
    if len(v) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return v


def _names(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in configparser.ConfigParser.BOOLEAN_STATES:
        return configparser.ConfigParser.BOOLEAN_STATES[low]
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# section -> key -> (bundle, field, parser); bundle "" is WorldConfig itself
_SCHEMA = {
    "scenario": {
        "name": ("meta", "name", str),
        "mode": ("meta", "mode", str),
        "plots": ("meta", "plots", _bool),
        "sweep_seeds": ("meta", "sweep_seeds", int),
        "seed": ("", "seed", int),
        "dt": ("", "dt", float),
        "duration": ("", "duration", float),
        "start": ("", "start", _vec2),
        "goal": ("", "goal", _vec2),
        "goal_tol": ("", "goal_tol", float),
        "actuation_noise": ("", "actuation_noise", float),
        "default_order": ("", "default_order", _names),
    },
    "robot": {
        "z0": ("hlip", "z0", float),
        "t_ssp": ("hlip", "t_ssp", float),
        "t_dsp": ("hlip", "t_dsp", float),
        "g": ("", "g", float),
        "q_weight": ("", "q_weight", _vec2),
        "r_weight": ("", "r_weight", float),
        "u_max": ("", "u_max", float),
        "v_max_walk": ("", "v_max_walk", float),
        "kp_walk": ("", "kp_walk", float),
        "foot_offset": ("", "foot_offset", float),
        "foot_radius": ("", "foot_radius", float),
        "push_limit": ("", "push_limit", float),
        "contact_mu": ("", "contact_mu", float),
        "fall_bound": ("", "fall_bound", float),
    },
    "planner": {
        "a_max": ("limits", "a_max", float),
        "v_max": ("limits", "v_max", float),
        "kappa": ("limits", "kappa", float),
        "alpha": ("", "alpha", _vec2),
        "relaxation_weight": ("", "relaxation_weight", float),
        "zeta_t_step": ("", "zeta_t_step", float),
        "zeta_speed": ("", "zeta_speed", _opt_float),
        "zeta_samples": ("", "zeta_samples", int),
        "ref_duration": ("", "ref_duration", float),
        "kp_ref": ("", "kp_ref", float),
        "kd_ref": ("", "kd_ref", float),
    },
    "dob": {
        "beta": ("", "dob_beta", float),
    },
    "estimation": {
        "gamma": ("blend", "gamma", float),
        "k_p_int": ("blend", "k_p_int", float),
        "k_d_int": ("blend", "k_d_int", float),
        "lambda_int": ("blend", "lambda_int", float),
        **{f.name: ("probe", f.name, int if f.name == "n_est" else float)
           for f in fields(ProbeConfig)},
    },
    "disturbance": {
        "start_step": ("disturbance", "start_step", int),
        "n_steps": ("disturbance", "n_steps", int),
        "magnitude": ("disturbance", "magnitude", float),
        "axis": ("disturbance", "axis", int),
    },
}

_BOX_KEYS = {"center": _vec2, "half_extent": float, "mass": float, "mu_ground": float}

_BUNDLES = {"hlip": HlipParams, "limits": PlannerLimits, "blend": ForceBlend,
            "probe": ProbeConfig, "disturbance": DisturbanceScript}


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None

    values: dict[str, dict] = {k: {} for k in ("meta", "", *_BUNDLES)}
    boxes = []
    for section in parser.sections():
        items = dict(parser.items(section))
        if section.startswith("box "):
            name = section[4:].strip()
            unknown = set(items) - set(_BOX_KEYS)
            if not name or unknown:
                raise ConfigError(f"{source}: [{section}] unknown keys {sorted(unknown)}")
            missing = {"center", "half_extent", "mass"} - set(items)
            if missing:
                raise ConfigError(f"{source}: [{section}] missing {sorted(missing)}")
            try:
                kw = {k: _BOX_KEYS[k](v) for k, v in items.items()}
                boxes.append(BoxBody(name, **kw))
            except (ValueError, ParameterError) as exc:
                raise ConfigError(f"{source}: [{section}] {exc}") from None
            continue
        schema = _SCHEMA.get(section)
        if schema is None:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in items.items():
            if key not in schema:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            bundle, attr, conv = schema[key]
            try:
                values[bundle][attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None

    meta = values.pop("meta")
    world_kw = values.pop("")
    if "g" in world_kw:
        values["hlip"].setdefault("g", world_kw["g"])
    dt = world_kw.get("dt", WorldConfig.dt)
    values["limits"].setdefault("dt", dt)
    try:
        for bundle, cls in _BUNDLES.items():
            world_kw[bundle] = cls(**values[bundle])
        world = WorldConfig(boxes=tuple(boxes), **world_kw)
        if world.default_order and sorted(world.default_order) != sorted(b.name for b in boxes):
            raise ConfigError(f"{source}: default_order must name every box exactly once")
        name = meta.get("name", Path(source).stem)
        scen = ScenarioConfig(name, "cbf_dob", world, meta.get("plots", False),
                              meta.get("sweep_seeds", 1))
        if scen.sweep_seeds < 1:
            raise ConfigError(f"{source}: sweep_seeds must be >= 1")
        return scen.with_mode(meta.get("mode", "cbf_dob"))
    except ConfigError:
        raise
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text, str(path))

"""Scenario schema, JSON loading and the built-in experiment set.

A scenario bundles everything one closed-loop run needs: duration and
period, per-line reference profiles, constraint overrides, sensor noise,
seed, plant perturbations and controller tuning.  Boundary units are the
bench units — flows in ul/s, pressures in Pa — and are converted to SI
exactly once inside the harness.

Scenario files are JSON mirroring the dataclasses below; unknown keys are
rejected so typos fail loudly instead of silently running defaults.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .params import PERTURBABLE, REGULATOR_PRESETS


class ConfigError(ValueError):
    """A scenario file or override is malformed."""


def _finite_tuple(values, what):
    arr = tuple(float(v) for v in np.atleast_1d(values))
    if not all(np.isfinite(arr)):
        raise ConfigError(f"{what} must be finite")
    return arr


@dataclass(frozen=True)
class ConstantProfile:
    """A reference held at one level for the whole run."""

    level: float

    def __post_init__(self):
        if not np.isfinite(self.level):
            raise ConfigError("profile level must be finite")

    def value(self, t):
        return self.level


@dataclass(frozen=True)
class StepProfile:
    """Piecewise-constant reference: ``levels[i]`` from ``times[i]`` on.

    Before the first breakpoint the profile sits at ``initial``.
    """

    times: tuple
    levels: tuple
    initial: float = 0.0

    def __post_init__(self):
        times = _finite_tuple(self.times, "step times")
        levels = _finite_tuple(self.levels, "step levels")
        if len(times) != len(levels) or not times:
            raise ConfigError("steps need matching, non-empty times and levels")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("step times must be strictly increasing")
        if not np.isfinite(self.initial):
            raise ConfigError("initial level must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "levels", levels)

    def value(self, t):
        out = self.initial
        for when, level in zip(self.times, self.levels):
            if t >= when:
                out = level
            else:
                break
        return out


@dataclass(frozen=True)
class LinearProfile:
    """Piecewise-linear reference (ramps, triangles); clamped at the ends."""

    times: tuple
    levels: tuple

    def __post_init__(self):
        times = _finite_tuple(self.times, "ramp times")
        levels = _finite_tuple(self.levels, "ramp levels")
        if len(times) != len(levels) or len(times) < 2:
            raise ConfigError("a linear profile needs at least two breakpoints")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("ramp times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "levels", levels)

    def value(self, t):
        return float(np.interp(t, self.times, self.levels))


_PROFILE_KINDS = {
    "constant": (ConstantProfile, {"level"}),
    "steps": (StepProfile, {"times", "levels", "initial"}),
    "linear": (LinearProfile, {"times", "levels"}),
}


def profile_from_dict(spec):
    """Build a profile from its JSON form, rejecting unknown keys."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("a reference profile must be a dict with a 'kind'")
    kind = spec["kind"]
    if kind not in _PROFILE_KINDS:
        raise ConfigError(
            f"unknown profile kind {kind!r}; known: {sorted(_PROFILE_KINDS)}"
        )
    cls, allowed = _PROFILE_KINDS[kind]
    extra = set(spec) - allowed - {"kind"}
    if extra:
        raise ConfigError(f"unknown profile keys {sorted(extra)} for kind {kind!r}")
    try:
        return cls(**{k: v for k, v in spec.items() if k != "kind"})
    except TypeError as exc:
        raise ConfigError(f"bad profile spec for kind {kind!r}: {exc}") from exc


def profile_to_dict(profile):
    for kind, (cls, keys) in _PROFILE_KINDS.items():
        if isinstance(profile, cls):
            out = {"kind": kind}
            for key in sorted(keys):
                out[key] = getattr(profile, key)
            return out
    raise ConfigError(f"not a profile: {profile!r}")


def _bound(value, what):
    """Parse a scalar or length-3 bound; 'inf' strings are allowed."""
    def one(v):
        if isinstance(v, str):
            if v in ("inf", "+inf", "-inf"):
                return float(v)
            raise ConfigError(f"{what}: bad value {v!r}")
        return float(v)

    if np.ndim(value) == 0:
        return one(value)
    vals = tuple(one(v) for v in value)
    if len(vals) != 3:
        raise ConfigError(f"{what} must be a scalar or one value per line")
    return vals


@dataclass(frozen=True)
class Constraints:
    """Actuator and flow bounds, in bench units (Pa, Pa/s, ul/s)."""

    u_min: float | tuple = 0.0
    u_max: float | tuple = 150_000.0
    du_max_rate: float | tuple = 100_000.0
    y_min: float | tuple = 0.0
    y_max: float | tuple = np.inf

    def __post_init__(self):
        for name in ("u_min", "u_max", "du_max_rate", "y_min", "y_max"):
            object.__setattr__(self, name, _bound(getattr(self, name), name))
        if np.any(np.asarray(self.u_min) > np.asarray(self.u_max)):
            raise ConfigError("u_min must not exceed u_max")
        if np.any(np.asarray(self.y_min) > np.asarray(self.y_max)):
            raise ConfigError("y_min must not exceed y_max")
        if np.any(np.asarray(self.du_max_rate) <= 0):
            raise ConfigError("du_max_rate must be positive")


_CONSTRAINT_KEYS = {"u_min", "u_max", "du_max_rate", "y_min", "y_max"}

CONTROLLERS = ("mpc", "pi")


@dataclass(frozen=True)
class Scenario:
    """Everything one closed-loop run needs (bench units at this boundary)."""

    name: str
    duration: float
    references: tuple  # one profile per line, levels in ul/s
    sample_period: float = 0.1
    controller: str = "mpc"
    constraints: Constraints = field(default_factory=Constraints)
    noise_std: float = 0.1  # ul/s
    rng_seed: int = 0
    plant_perturbations: tuple = ()  # ((name, multiplier-or-3-tuple), ...)
    regulator_preset: str = "nominal"
    horizon: int = 10
    alpha: float = 1e-7
    beta: float = 1e-4
    pi_gain_scale: float = 1.0
    soft_outputs: bool = False
    substep: float = 1e-4

    def __post_init__(self):
        if self.duration <= 0 or self.sample_period <= 0:
            raise ConfigError("duration and sample_period must be positive")
        if self.substep <= 0 or self.substep > self.sample_period:
            raise ConfigError("substep must be in (0, sample_period]")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}")
        if len(self.references) != 3:
            raise ConfigError("exactly three reference profiles are required")
        for p in self.references:
            if not hasattr(p, "value"):
                raise ConfigError("references must be profile objects")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if self.regulator_preset not in REGULATOR_PRESETS:
            raise ConfigError(
                f"unknown regulator preset {self.regulator_preset!r}; "
                f"known: {sorted(REGULATOR_PRESETS)}"
            )
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError("horizon must be an integer >= 1")
        if self.alpha <= 0 or self.beta <= 0 or self.pi_gain_scale <= 0:
            raise ConfigError("alpha, beta and pi_gain_scale must be positive")
        pert = self.plant_perturbations
        if isinstance(pert, dict):
            pert = tuple(sorted(pert.items()))
        else:
            pert = tuple((k, v) for k, v in pert)
        for key, value in pert:
            if key not in PERTURBABLE:
                raise ConfigError(
                    f"unknown plant perturbation {key!r}; allowed: {PERTURBABLE}"
                )
            if np.ndim(value) not in (0, 1) or (
                np.ndim(value) == 1 and len(value) != 3
            ):
                raise ConfigError(f"perturbation {key!r} must be scalar or 3 values")
            if not np.all(np.isfinite(value)) or np.any(np.asarray(value) <= 0):
                raise ConfigError(f"perturbation {key!r} must be positive and finite")
        pert = tuple(
            (k, float(v) if np.ndim(v) == 0 else tuple(float(x) for x in v))
            for k, v in pert
        )
        object.__setattr__(self, "plant_perturbations", pert)

    @property
    def n_steps(self):
        return int(round(self.duration / self.sample_period))

    def reference_values(self, t):
        """Per-line reference at time t, in ul/s."""
        return np.array([p.value(t) for p in self.references])

    def reference_preview(self, t, horizon):
        """References at t + T .. t + N*T, shape (N, 3), in ul/s."""
        times = t + self.sample_period * np.arange(1, horizon + 1)
        return np.array([[p.value(tk) for p in self.references] for tk in times])

    def perturbation_dict(self):
        return {k: v for k, v in self.plant_perturbations}


_SCENARIO_KEYS = {
    "name", "duration", "references", "sample_period", "controller",
    "constraints", "noise_std", "rng_seed", "plant_perturbations",
    "regulator_preset", "horizon", "alpha", "beta", "pi_gain_scale",
    "soft_outputs", "substep",
}


def scenario_from_dict(spec):
    """Build a Scenario from its JSON form; unknown keys are errors."""
    if not isinstance(spec, dict):
        raise ConfigError("a scenario must be a JSON object")
    extra = set(spec) - _SCENARIO_KEYS
    if extra:
        raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
    missing = {"name", "duration", "references"} - set(spec)
    if missing:
        raise ConfigError(f"missing scenario keys: {sorted(missing)}")
    kwargs = dict(spec)
    refs = kwargs.pop("references")
    if not isinstance(refs, (list, tuple)) or len(refs) != 3:
        raise ConfigError("references must list exactly three profiles")
    kwargs["references"] = tuple(profile_from_dict(p) for p in refs)
    if "constraints" in kwargs:
        cons = kwargs["constraints"]
        if not isinstance(cons, dict):
            raise ConfigError("constraints must be an object")
        extra = set(cons) - _CONSTRAINT_KEYS
        if extra:
            raise ConfigError(f"unknown constraint keys: {sorted(extra)}")
        kwargs["constraints"] = Constraints(**cons)
    if "plant_perturbations" in kwargs:
        pert = kwargs["plant_perturbations"]
        if not isinstance(pert, dict):
            raise ConfigError("plant_perturbations must be an object")
        kwargs["plant_perturbations"] = tuple(sorted(pert.items()))
    try:
        return Scenario(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad scenario: {exc}") from exc


def scenario_to_dict(scenario):
    """JSON form of a scenario (round-trips through scenario_from_dict)."""
    cons = scenario.constraints
    return {
        "name": scenario.name,
        "duration": scenario.duration,
        "sample_period": scenario.sample_period,
        "controller": scenario.controller,
        "references": [profile_to_dict(p) for p in scenario.references],
        "constraints": {
            "u_min": cons.u_min,
            "u_max": cons.u_max,
            "du_max_rate": cons.du_max_rate,
            "y_min": cons.y_min,
            "y_max": "inf" if np.ndim(cons.y_max) == 0 and np.isinf(cons.y_max)
            else cons.y_max,
        },
        "noise_std": scenario.noise_std,
        "rng_seed": scenario.rng_seed,
        "plant_perturbations": scenario.perturbation_dict(),
        "regulator_preset": scenario.regulator_preset,
        "horizon": scenario.horizon,
        "alpha": scenario.alpha,
        "beta": scenario.beta,
        "pi_gain_scale": scenario.pi_gain_scale,
        "soft_outputs": scenario.soft_outputs,
        "substep": scenario.substep,
    }


def load_scenario(path):
    """Load one scenario from a JSON file."""
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(spec)


def save_scenario(scenario, path):
    """Write a scenario as JSON (useful as a template for edits)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=False)
        fh.write("\n")


def _steps(level, at=1.0):
    return StepProfile(times=(at,), levels=(level,))


def _builtin_steps_distinct():
    """Distinct stepped setpoints: 1, 2 and 3 ul/s from t = 1 s."""
    return Scenario(
        name="steps-distinct",
        duration=20.0,
        references=(_steps(1.0), _steps(2.0), _steps(3.0)),
    )


def _builtin_steps_equal():
    """Equal setpoints stepping together: 1 ul/s at t=1 s, 2 ul/s at t=10 s."""
    ref = StepProfile(times=(1.0, 10.0), levels=(1.0, 2.0))
    return Scenario(name="steps-equal", duration=20.0, references=(ref, ref, ref))


def _builtin_triangle_capped():
    """Equal triangular references under a 60 kPa pressure cap.

    The ramp asks for up to 6 ul/s per line, which needs ~97 kPa, so the
    flows track until the cap bites (~3.7 ul/s) and depart symmetrically.
    """
    ref = LinearProfile(times=(1.0, 13.0, 25.0), levels=(0.0, 6.0, 0.0))
    return Scenario(
        name="triangle-capped",
        duration=30.0,
        references=(ref, ref, ref),
        constraints=Constraints(u_max=60_000.0),
    )


def _builtin_pressure_cap_9500():
    """Small steps under a tight 9.5 kPa absolute-pressure cap."""
    return Scenario(
        name="pressure-cap-9500",
        duration=15.0,
        references=(_steps(0.5), _steps(0.5), _steps(0.5)),
        constraints=Constraints(u_max=9_500.0),
    )


def _builtin_rate_cap_2000():
    """Steps under a 2 kPa/s slew limit (200 Pa per period)."""
    return Scenario(
        name="rate-cap-2000",
        duration=20.0,
        references=(_steps(1.0), _steps(1.0), _steps(1.0)),
        constraints=Constraints(du_max_rate=2_000.0),
    )


def _builtin_flow_bounds():
    """References above per-line flow caps; the caps must win."""
    return Scenario(
        name="flow-bounds",
        duration=15.0,
        references=(_steps(2.0), _steps(2.0), _steps(2.0)),
        constraints=Constraints(y_max=(1.0, 1.5, 2.5)),
    )


def _builtin_mismatch_20pct():
    """steps-distinct with plant resistances 20% off the control model."""
    base = _builtin_steps_distinct()
    return replace(
        base,
        name="mismatch-20pct",
        plant_perturbations=(
            ("r_chip", (1.2, 0.8, 1.2)),
            ("r_line", (1.2, 0.8, 1.2)),
        ),
    )


_BUILTINS = {
    "steps-distinct": _builtin_steps_distinct,
    "steps-equal": _builtin_steps_equal,
    "triangle-capped": _builtin_triangle_capped,
    "pressure-cap-9500": _builtin_pressure_cap_9500,
    "rate-cap-2000": _builtin_rate_cap_2000,
    "flow-bounds": _builtin_flow_bounds,
    "mismatch-20pct": _builtin_mismatch_20pct,
}


def builtin_names():
    return sorted(_BUILTINS)


def builtin(name):
    """One of the built-in scenarios, by fixed name."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ConfigError(
            f"unknown built-in scenario {name!r}; known: {builtin_names()}"
        ) from None
    return factory()


def resolve(name_or_path):
    """A built-in name, or failing that, a JSON scenario file path."""
    if name_or_path in _BUILTINS:
        return builtin(name_or_path)
    return load_scenario(name_or_path)

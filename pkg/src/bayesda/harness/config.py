"""Experiment configuration: schema, validation and round-trip emission.

Schema (YAML or JSON)::

    method: enkf                 # one of METHODS
    model: scalar-lg             # benchmark name, or a mapping (see below)
    seed: 7
    J: 20                        # assimilation steps / tempering steps
    params: {N: 100, s: 1}       # method parameters, see MethodParams
    data: obs.csv                # optional: observations instead of simulated ones
    output: {path: out.csv, format: csv}

``model`` may also be ``{name: contractive-3dvar, gamma: 0.01}`` (benchmark
with overrides) or ``{linear: {M, H, Sigma, Gamma, m0, C0}}`` (inline
linear-Gaussian model, matrices as nested lists).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from ..models import BENCHMARKS

METHODS = ("kf", "ks", "3dvar", "4dvar", "w4dvar", "exkf", "enkf", "bpf", "opf", "gopf",
           "mh", "pcn", "eki", "smc", "map", "gauss-fit")
STATIC_METHODS = ("mh", "pcn", "eki", "smc", "map", "gauss-fit")
FORMATS = ("csv", "json")

REQUIRED = {
    "enkf": ("N",),
    "bpf": ("N",),
    "opf": ("N",),
    "gopf": ("N",),
    "eki": ("N", "steps"),
    "smc": ("N",),
    "mh": ("steps",),
    "pcn": ("steps", "beta"),
}

LINEAR_KEYS = ("M", "H", "Sigma", "Gamma", "m0", "C0")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass(frozen=True)
class MethodParams:
    N: int | None = None  # particles / ensemble members
    beta: float | None = None  # pCN step
    steps: int | None = None  # chain length (mh, pcn) or iterations (eki)
    s: int = 1  # perturbed observations in the EnKF
    perturb: bool = False  # perturbed observations in EKI
    scale: float = 0.5  # random-walk proposal s.d. (mh)
    mutation_steps: int = 5  # pCN moves per temperature (smc)
    gain: float | None = None  # fixed 3DVAR gain multiple of H^T
    c_hat: float = 1.0  # background covariance scale for the 3DVAR gain
    tol: float = 1e-8
    max_iter: int = 10_000
    prior_var: float = 1.0  # static problems: prior N(0, prior_var I)
    noise_sd: float = 0.1  # static problems: observation noise s.d.
    lam_starts: int = 4  # starts in the Gaussian KL fit
    segments: int = 10  # report rows for MCMC chains


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    model: str
    seed: int
    J: int = 10
    params: MethodParams = field(default_factory=MethodParams)
    model_params: dict = field(default_factory=dict)
    linear: dict | None = None
    data: str | None = None
    out: str | None = None
    format: str = "csv"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)


_PARAM_TYPES = {f.name: f.type for f in fields(MethodParams)}


def _check_type(path: str, value, kind: str):
    if "bool" in kind:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if "int" in kind:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if "float" in kind:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    return value


def _parse_params(raw) -> MethodParams:
    if raw is None:
        return MethodParams()
    if not isinstance(raw, dict):
        raise ConfigError("params: expected a mapping")
    out = {}
    for key, value in raw.items():
        if key not in _PARAM_TYPES:
            raise ConfigError(f"params.{key}: unknown parameter; known: {', '.join(_PARAM_TYPES)}")
        if value is None:
            out[key] = None
            continue
        out[key] = _check_type(f"params.{key}", value, _PARAM_TYPES[key])
    return MethodParams(**out)


def _parse_model(raw):
    if isinstance(raw, str):
        name, extra, linear = raw, {}, None
    elif isinstance(raw, dict) and "linear" in raw:
        lin = raw["linear"]
        if not isinstance(lin, dict):
            raise ConfigError("model.linear: expected a mapping")
        for key in LINEAR_KEYS:
            if key not in lin:
                raise ConfigError(f"model.linear.{key}: missing")
        unknown = set(lin) - set(LINEAR_KEYS)
        if unknown:
            raise ConfigError(f"model.linear.{sorted(unknown)[0]}: unknown key")
        return "inline-linear", {}, {k: lin[k] for k in LINEAR_KEYS}
    elif isinstance(raw, dict):
        if "name" not in raw:
            raise ConfigError("model.name: missing")
        name = raw["name"]
        extra = {k: v for k, v in raw.items() if k != "name"}
        linear = None
    else:
        raise ConfigError("model: expected a benchmark name or a mapping")
    if name not in BENCHMARKS:
        raise ConfigError(f"model: unknown benchmark {name!r}; valid names: {', '.join(BENCHMARKS)}")
    for key, value in extra.items():
        if key == "gamma":
            extra[key] = _check_type("model.gamma", value, "float")
        elif key == "L":
            extra[key] = _check_type("model.L", value, "int")
        else:
            raise ConfigError(f"model.{key}: unknown benchmark parameter")
    return name, extra, linear


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a mapping")
    known = {"method", "model", "seed", "J", "params", "data", "output"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{key}: unknown key; known: {', '.join(sorted(known))}")
    for key in ("method", "model", "seed"):
        if key not in raw:
            raise ConfigError(f"{key}: missing")
    method = raw["method"]
    if method not in METHODS:
        raise ConfigError(f"method: unknown method {method!r}; valid: {', '.join(METHODS)}")
    seed = _check_type("seed", raw["seed"], "int")
    if seed < 0:
        raise ConfigError("seed: must be nonnegative")
    J = _check_type("J", raw.get("J", 10), "int")
    if J < 1:
        raise ConfigError("J: must be >= 1")
    name, model_params, linear = _parse_model(raw["model"])
    params = _parse_params(raw.get("params"))
    for key in REQUIRED.get(method, ()):
        if getattr(params, key) is None:
            raise ConfigError(f"params.{key}: required for method {method!r}")
    if params.N is not None and params.N < 1:
        raise ConfigError("params.N: must be >= 1")
    if params.beta is not None and not 0.0 < params.beta <= 1.0:
        raise ConfigError("params.beta: must lie in (0, 1]")
    if params.s not in (0, 1):
        raise ConfigError("params.s: must be 0 or 1")
    static = name == "ode-inverse"
    if (method in STATIC_METHODS) != static:
        kind = "an inverse-problem" if method in STATIC_METHODS else "a state-space"
        raise ConfigError(f"model: method {method!r} needs {kind} model, got {name!r}")
    data = raw.get("data")
    if data is not None and not isinstance(data, str):
        raise ConfigError("data: expected a file path")
    output = raw.get("output") or {}
    if not isinstance(output, dict):
        raise ConfigError("output: expected a mapping")
    for key in output:
        if key not in ("path", "format"):
            raise ConfigError(f"output.{key}: unknown key")
    fmt = output.get("format", "csv")
    if fmt not in FORMATS:
        raise ConfigError(f"output.format: expected one of {FORMATS}, got {fmt!r}")
    return ExperimentConfig(method=method, model=name, seed=seed, J=J, params=params,
                            model_params=model_params, linear=linear, data=data,
                            out=output.get("path"), format=fmt)


def parse_config(text: str) -> ExperimentConfig:
    """Parse YAML (or JSON) text into a validated config."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: not valid YAML/JSON ({exc})") from None
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved config as plain data; parses back to an equal config."""
    if cfg.linear is not None:
        model = {"linear": cfg.linear}
    elif cfg.model_params:
        model = {"name": cfg.model, **cfg.model_params}
    else:
        model = cfg.model
    out = {
        "method": cfg.method,
        "model": model,
        "seed": cfg.seed,
        "J": cfg.J,
        "params": asdict(cfg.params),
        "output": {"format": cfg.format},
    }
    if cfg.out is not None:
        out["output"]["path"] = cfg.out
    if cfg.data is not None:
        out["data"] = cfg.data
    return out


def emit_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)

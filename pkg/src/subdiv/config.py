"""Experiment configuration: parsing, validation and canonical serialization.

A config is a YAML document::

    model:      {preset: hmm, params: {T: 40}}
    inference:  {kind: smc, params: {proposal: conditional}}
    reference:  {kind: oracle, params: {}}
    sweep:      [1, 2, 4, 8, 16]
    n_ref: 1000
    n_inf: 1000
    seed: 0
    output: results
    raw_weights: false

Validation collects every problem as ``(field_path, message)`` before raising
:class:`~subdiv.errors.ConfigError`.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError

INFERENCE_KINDS = ("sir", "seqdb", "smc", "assessable")
REFERENCE_KINDS = ("oracle", "lw_sir", "seqdb")
TOP_LEVEL = ("model", "inference", "reference", "sweep", "n_ref", "n_inf", "seed", "output",
             "raw_weights")
U64_MAX = (1 << 64) - 1

DEFAULTS = {
    "reference": {"kind": "oracle", "params": {}},
    "n_ref": 1000,
    "n_inf": 1000,
    "seed": 0,
    "output": "results",
    "raw_weights": False,
}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    model_params: dict
    inference_kind: str
    inference_params: dict
    reference_kind: str
    reference_params: dict
    sweep: tuple
    n_ref: int
    n_inf: int
    seed: int
    output: str
    raw_weights: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self):
        return {
            "model": {"preset": self.preset, "params": dict(self.model_params)},
            "inference": {"kind": self.inference_kind, "params": dict(self.inference_params)},
            "reference": {"kind": self.reference_kind, "params": dict(self.reference_params)},
            "sweep": list(self.sweep),
            "n_ref": self.n_ref,
            "n_inf": self.n_inf,
            "seed": self.seed,
            "output": self.output,
            "raw_weights": self.raw_weights,
        }

    def replace(self, **changes):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _section(raw, name, key, errors, required=True):
    sec = raw.get(name)
    if sec is None:
        if required:
            errors.append((name, "missing"))
        return None, {}
    if isinstance(sec, str):
        sec = {key: sec}
    if not isinstance(sec, dict):
        errors.append((name, "must be a mapping"))
        return None, {}
    unknown = set(sec) - {key, "params"}
    for k in sorted(unknown):
        errors.append((f"{name}.{k}", "unknown field"))
    value = sec.get(key)
    if value is None:
        errors.append((f"{name}.{key}", "missing"))
    elif not isinstance(value, str):
        errors.append((f"{name}.{key}", "must be a string"))
        value = None
    params = sec.get("params", {}) or {}
    if not isinstance(params, dict):
        errors.append((f"{name}.params", "must be a mapping"))
        params = {}
    return value, dict(params)


def _check_params(path, params, allowed, errors):
    for k in sorted(set(params) - set(allowed)):
        errors.append((f"{path}.{k}", f"unknown parameter (allowed: {', '.join(sorted(allowed))})"))


def normalize(raw):
    """Fill defaults and canonicalize shorthand forms of a parsed config mapping.

    Does not validate; see :func:`validate_config`.
    """
    out = {k: raw[k] for k in TOP_LEVEL if k in raw}
    for name, key in (("model", "preset"), ("inference", "kind"), ("reference", "kind")):
        sec = raw.get(name, DEFAULTS.get(name))
        if isinstance(sec, str):
            sec = {key: sec}
        if isinstance(sec, dict):
            out[name] = {key: sec.get(key), "params": dict(sec.get("params") or {})}
    for k, v in DEFAULTS.items():
        out.setdefault(k, v)
    if isinstance(out.get("sweep"), (int, float)) and not isinstance(out.get("sweep"), bool):
        out["sweep"] = [out["sweep"]]
    return out


def validate_mapping(raw):
    """Validate a parsed mapping and return an :class:`ExperimentConfig`."""
    from .experiment import INFERENCE_PARAMS, PRESETS, REFERENCE_PARAMS

    if not isinstance(raw, dict):
        raise ConfigError([("", "config must be a mapping")])
    errors = []
    for k in sorted(set(raw) - set(TOP_LEVEL)):
        errors.append((k, "unknown field"))
    raw = normalize(raw)

    preset, model_params = _section(raw, "model", "preset", errors)
    if preset is not None:
        if preset not in PRESETS:
            errors.append(("model.preset", f"unknown preset {preset!r}"))
        else:
            allowed = inspect.signature(PRESETS[preset].build).parameters
            _check_params("model.params", model_params, allowed, errors)

    kind, inf_params = _section(raw, "inference", "kind", errors)
    if kind is not None:
        if kind not in INFERENCE_KINDS:
            errors.append(("inference.kind", f"must be one of {', '.join(INFERENCE_KINDS)}"))
        else:
            _check_params("inference.params", inf_params, INFERENCE_PARAMS[kind], errors)
            if preset in PRESETS and kind not in PRESETS[preset].inference_kinds:
                errors.append(("inference.kind",
                               f"{kind!r} is not available for preset {preset!r}"))

    ref_kind, ref_params = _section(raw, "reference", "kind", errors)
    if ref_kind is not None:
        if ref_kind not in REFERENCE_KINDS:
            errors.append(("reference.kind", f"must be one of {', '.join(REFERENCE_KINDS)}"))
        else:
            _check_params("reference.params", ref_params, REFERENCE_PARAMS[ref_kind], errors)
            if preset in PRESETS and ref_kind not in PRESETS[preset].reference_kinds:
                errors.append(("reference.kind",
                               f"{ref_kind!r} is not available for preset {preset!r}"))

    sweep = raw.get("sweep")
    if sweep is None:
        errors.append(("sweep", "missing"))
        sweep = []
    elif not isinstance(sweep, list) or not sweep:
        errors.append(("sweep", "must be a non-empty list"))
        sweep = []
    else:
        for i, v in enumerate(sweep):
            if not _is_number(v):
                errors.append((f"sweep[{i}]", "must be a number"))
            elif kind in ("sir", "smc", "seqdb") and (not _is_int(v) or v < 1):
                errors.append((f"sweep[{i}]", "must be an integer >= 1 for this inference kind"))
            elif kind == "assessable" and v <= 0:
                errors.append((f"sweep[{i}]", "variance must be positive"))

    for name in ("n_ref", "n_inf"):
        v = raw.get(name)
        if not _is_int(v) or v < 2:
            errors.append((name, "must be an integer >= 2"))
    seed = raw.get("seed")
    if not _is_int(seed) or not 0 <= seed <= U64_MAX:
        errors.append(("seed", "must be an integer in [0, 2^64)"))
    if not isinstance(raw.get("output"), str) or not raw.get("output"):
        errors.append(("output", "must be a non-empty string"))
    if not isinstance(raw.get("raw_weights"), bool):
        errors.append(("raw_weights", "must be true or false"))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        preset=preset, model_params=model_params,
        inference_kind=kind, inference_params=inf_params,
        reference_kind=ref_kind, reference_params=ref_params,
        sweep=tuple(sweep), n_ref=raw["n_ref"], n_inf=raw["n_inf"], seed=seed,
        output=raw["output"], raw_weights=raw["raw_weights"],
    )


def parse(text):
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("", f"not valid YAML: {exc}")]) from exc
    return {} if raw is None else raw


def validate_config(text):
    """Parse YAML text and validate it."""
    return validate_mapping(parse(text))


def serialize(config):
    """Canonical YAML text for a config (or for a normalized mapping)."""
    data = config.to_dict() if isinstance(config, ExperimentConfig) else config
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([("--config", str(exc))]) from exc
    return validate_config(text)

"""Strict JSON configuration for the command-line experiment."""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .blockmatch import MatchParams, check_block_fits
from .metrics import RoiSpec
from .simulator import NOISE_PRESETS, PHANTOM_PRESETS, InvalidSpecError, NoiseSpec, PhantomSpec, ScanGeometry, phantom_preset
from .solver import RestoreParams
from .volume import BlockSpec

U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Invalid configuration or a missing stage input."""


_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_SEED = {"type": "integer", "minimum": 0, "maximum": U64_MAX}

_ELLIPSE = {
    "type": "object",
    "properties": {
        "center": _PAIR,
        "axes": _PAIR,
        "angle": _NUM,
        "value": _NUM,
        "slices": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
    },
    "required": ["center", "axes", "angle", "value"],
    "additionalProperties": False,
}

_PHANTOM = {
    "type": "object",
    "properties": {
        "dims": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
        "preset": {"enum": sorted(PHANTOM_PRESETS)},
        "ellipses": {"type": "array", "items": _ELLIPSE},
    },
    "required": ["dims"],
    "oneOf": [{"required": ["preset"]}, {"required": ["ellipses"]}],
    "additionalProperties": False,
}

_REGION = {
    "type": "object",
    "properties": {
        "box": {
            "type": "array",
            "minItems": 3,
            "maxItems": 3,
            "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        },
        "indices": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3},
        },
    },
    "oneOf": [{"required": ["box"]}, {"required": ["indices"]}],
    "additionalProperties": False,
}

_MATCH = {
    "type": "object",
    "properties": {
        "block_radius": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 3, "maxItems": 3},
        "k": _POS_INT,
        "iterations": _POS_INT,
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "bandwidth": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
    },
    "additionalProperties": False,
}

_RESTORE = {
    "type": "object",
    "properties": {
        "lambda_s": {"type": "number", "minimum": 0},
        "lambda_h": {"type": "number", "minimum": 0},
        "mu1": {"type": "number", "exclusiveMinimum": 0},
        "mu2": {"type": "number", "exclusiveMinimum": 0},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": _POS_INT,
        "gs_sweeps": _POS_INT,
        "match": _MATCH,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "phantom": _PHANTOM,
        "geometry": {
            "type": "object",
            "properties": {"n_theta": {"type": "integer", "minimum": 2}, "n_u": _POS_INT},
            "required": ["n_theta", "n_u"],
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {
                "preset": {"enum": sorted(NOISE_PRESETS)},
                "N0": {"type": "number", "exclusiveMinimum": 0},
                "sigma_e": {"type": "number", "minimum": 0},
            },
            "oneOf": [{"required": ["preset"]}, {"required": ["N0", "sigma_e"]}],
            "not": {"required": ["preset", "N0"]},
            "additionalProperties": False,
        },
        "subsample": {
            "type": "object",
            "properties": {
                "pattern": {"const": "alternate"},
                "indices": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            },
            "oneOf": [{"required": ["pattern"]}, {"required": ["indices"]}],
            "additionalProperties": False,
        },
        "reference": {
            "type": "object",
            "properties": {"simulate-sibling": _PHANTOM, "path": {"type": "string"}},
            "oneOf": [{"required": ["simulate-sibling"]}, {"required": ["path"]}],
            "additionalProperties": False,
        },
        "restore": _RESTORE,
        "roi": {
            "type": "object",
            "properties": {"foreground": _REGION, "background": _REGION},
            "required": ["foreground", "background"],
            "additionalProperties": False,
        },
        "preview": {
            "type": "object",
            "properties": {"window": {"type": "number", "exclusiveMinimum": 0}, "level": _NUM},
            "required": ["window", "level"],
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "seed": _SEED,
    },
    "required": ["phantom", "geometry", "noise", "subsample", "reference", "roi", "preview"],
    "additionalProperties": False,
}


def _field(path):
    return ".".join(str(p) for p in path) or "<root>"


def validate(payload):
    """Raise `ConfigError` naming the first offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(payload), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        err = errors[0]
        raise ConfigError(f"config field {_field(err.path)}: {err.message}")


def _phantom(payload, where):
    try:
        if "preset" in payload:
            return phantom_preset(payload["preset"], tuple(payload["dims"]))
        return PhantomSpec.from_dict(payload)
    except InvalidSpecError as exc:
        raise ConfigError(f"config field {where}: {exc}") from None


@dataclass(frozen=True)
class DerivedSeeds:
    noise: int
    reference: int
    match: int

    @classmethod
    def from_seed(cls, seed):
        # independent streams for the noisy scan, the reference scan and block matching
        noise, reference, match = (int(s) for s in np.random.SeedSequence(seed).generate_state(3, dtype=np.uint64))
        return cls(noise, reference, match)


@dataclass(frozen=True)
class PipelineConfig:
    phantom: PhantomSpec
    geometry: ScanGeometry
    noise: NoiseSpec
    subsample: object  # "alternate" or a list of view indices
    reference: object  # PhantomSpec for a simulated sibling, or a Path to a volume
    restore: RestoreParams
    roi: RoiSpec
    window: float
    level: float
    output_dir: Path
    seed: int
    resolved: dict

    @property
    def image_dims(self):
        return self.phantom.dims


def _restore_params(payload, match_seed):
    match_in = dict(payload.get("match", {}))
    block = BlockSpec(*match_in.pop("block_radius", MatchParams().block.radii))
    match = MatchParams(block=block, seed=match_seed, **match_in)
    fields = {k: v for k, v in payload.items() if k != "match"}
    return RestoreParams(match=match, **fields)


def _resolved_restore(params):
    out = asdict(params)
    match = out.pop("match")
    block = params.match.block
    match.pop("block")
    match.pop("seed")
    match["block_radius"] = [block.r_u, block.r_v, block.r_theta]
    out["match"] = match
    return out


def build_config(payload, base_dir=".", out=None, seed=None):
    """Validate `payload` and resolve it against command-line overrides.

    Relative paths resolve from `base_dir`.  `out` and `seed` override the
    config's ``output_dir`` and ``seed``; each must come from one of the two.
    """
    validate(payload)
    base_dir = Path(base_dir)
    if seed is None:
        if "seed" not in payload:
            raise ConfigError("config field seed: required (or pass --seed)")
        seed = payload["seed"]
    if not isinstance(seed, int) or not 0 <= seed <= U64_MAX:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if out is None:
        if "output_dir" not in payload:
            raise ConfigError("config field output_dir: required (or pass --out)")
        out = base_dir / payload["output_dir"]
    seeds = DerivedSeeds.from_seed(seed)

    phantom = _phantom(payload["phantom"], "phantom")
    geo = payload["geometry"]
    geometry = ScanGeometry(geo["n_theta"], geo["n_u"])

    noise_in = payload["noise"]
    try:
        if "preset" in noise_in:
            noise = NoiseSpec.preset(noise_in["preset"], seed=seeds.noise)
        else:
            noise = NoiseSpec(float(noise_in["N0"]), float(noise_in["sigma_e"]), seed=seeds.noise)
    except InvalidSpecError as exc:
        raise ConfigError(f"config field noise: {exc}") from None

    sub = payload["subsample"]
    subsample = sub["pattern"] if "pattern" in sub else list(sub["indices"])
    if not isinstance(subsample, str):
        if max(subsample) >= geometry.n_theta:
            raise ConfigError(f"config field subsample.indices: view index {max(subsample)} >= n_theta={geometry.n_theta}")
        if len(set(subsample)) != len(subsample):
            raise ConfigError("config field subsample.indices: duplicate view index")

    ref_in = payload["reference"]
    if "path" in ref_in:
        reference = (base_dir / ref_in["path"]).resolve()
        if not reference.with_suffix(".json").is_file() or not reference.with_suffix(".raw").is_file():
            raise ConfigError(f"config field reference.path: no volume at {reference}")
    else:
        reference = _phantom(ref_in["simulate-sibling"], "reference.simulate-sibling")

    try:
        restore = _restore_params(payload.get("restore", {}), seeds.match)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field restore: {exc}") from None

    if isinstance(reference, PhantomSpec):
        sino_dims = (geometry.n_u, phantom.dims[2], geometry.n_theta)
        ref_dims = (geometry.n_u, reference.dims[2], geometry.n_theta)
        try:
            check_block_fits(restore.match.block, sino_dims, ref_dims)
        except ValueError as exc:
            raise ConfigError(f"config field restore.match.block_radius: {exc}") from None

    try:
        roi = RoiSpec.from_dict(payload["roi"], phantom.dims)
    except ValueError as exc:
        raise ConfigError(f"config field roi: {exc}") from None

    resolved = json.loads(json.dumps(payload))
    resolved.pop("output_dir", None)
    resolved["seed"] = seed
    resolved["restore"] = _resolved_restore(restore)
    resolved["derived_seeds"] = asdict(seeds)
    return PipelineConfig(
        phantom=phantom,
        geometry=geometry,
        noise=noise,
        subsample=subsample,
        reference=reference,
        restore=restore,
        roi=roi,
        window=float(payload["preview"]["window"]),
        level=float(payload["preview"]["level"]),
        output_dir=Path(out),
        seed=seed,
        resolved=resolved,
    )


def load_config(path, out=None, seed=None):
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return build_config(payload, base_dir=path.parent, out=out, seed=seed)

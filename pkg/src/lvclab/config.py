"""Experiment configuration: YAML parsing, validation, defaults, hashing.

Configs are declarative YAML with nested blocks (model / solver / mc /
predict / verify / output).  All defaults are materialized into the resolved
dict, which is embedded verbatim in every output artifact together with its
content hash, making runs self-describing and replayable.
"""

from __future__ import annotations

import copy
import hashlib
import json

import yaml

from .errors import ConfigError
from .mc import MatrixEnsemble
from .model import (BlockPrior, ChannelModel, GaussianChannel, SystemShape,
                    bernoulli_gaussian, bpsk, discrete_prior, gaussian_prior)
from .replica import QuadOptions, SolverOptions

DEFAULTS = {
    "solver": {
        "tolerance": 1e-9,
        "damping": 0.5,
        "damping_floor": 0.01,
        "max_iterations": 10000,
        "initializations": ["informed", "uninformed"],
        "extra_initializations": [],
        "hermite_t": 40,
        "hermite_u": 40,
        "y_tol": 1e-11,
        "z_tol": 1e-12,
        "force_quadrature": False,
    },
    "mc": {
        "shapes": [],
        "ensemble": "gaussian",
        "sampler": "enumeration",
        "trials": 10000,
        "L": 1,
        "seed": 0,
        "gibbs": {"sweeps": 100000, "burn_in": 1000, "thin": 1},
    },
    "predict": {
        "L": None,
        "z_tol": 1e-12,
        "grid_points": 201,
        "grid_span": 6.0,
    },
    "verify": {
        "distances": ["tv", "independence", "energy", "ks"],
        "bootstrap": {"resamples": 1000, "level": 0.95},
        "energy": {"max_points": 20000, "subsample": 2000, "resamples": 300},
    },
    "output": {"dir": "runs/out", "figures": True},
}

_PRIOR_KINDS = ("bpsk", "gaussian", "bernoulli_gaussian", "discrete", "block")
_CHANNEL_KINDS = ("gaussian",)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"YAML parse error: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    return raw


def _merge_defaults(block: dict, defaults: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in (block or {}).items():
        if key not in defaults:
            raise ConfigError(f"{path}.{key}", "unknown field")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_defaults(value, defaults[key], f"{path}.{key}")
        else:
            out[key] = value
    return out


def _require(block, key, path, types=None):
    if key not in block:
        raise ConfigError(f"{path}.{key}", "required field is missing")
    value = block[key]
    if types is not None and not isinstance(value, types):
        raise ConfigError(f"{path}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


def _resolve_prior(spec, path):
    if not isinstance(spec, dict):
        raise ConfigError(path, "prior must be a mapping with a 'kind'")
    kind = _require(spec, "kind", path, str)
    if kind not in _PRIOR_KINDS:
        raise ConfigError(f"{path}.kind", f"unknown prior kind {kind!r}")
    out = {"kind": kind}
    if kind == "gaussian":
        out["variance"] = float(spec.get("variance", 1.0))
    elif kind == "bernoulli_gaussian":
        out["sparsity"] = float(_require(spec, "sparsity", path))
        out["variance"] = float(spec.get("variance", 1.0))
    elif kind == "discrete":
        out["atoms"] = [float(a) for a in _require(spec, "atoms", path, list)]
        out["probs"] = [float(p) for p in _require(spec, "probs", path, list)]
    elif kind == "block":
        out["atoms"] = [float(a) for a in _require(spec, "atoms", path, list)]
        out["table"] = _require(spec, "table", path, list)
        out["rest"] = _resolve_prior(_require(spec, "rest", path, dict), f"{path}.rest")
    return out


def _resolve_channel(spec, path):
    if not isinstance(spec, dict):
        raise ConfigError(path, "channel must be a mapping with a 'kind'")
    kind = _require(spec, "kind", path, str)
    if kind not in _CHANNEL_KINDS:
        raise ConfigError(f"{path}.kind",
                          f"config files support channel kinds {_CHANNEL_KINDS}; "
                          "custom channels go through the library API")
    variance = float(spec.get("variance", 1.0))
    if variance <= 0:
        raise ConfigError(f"{path}.variance", "must be positive")
    return {"kind": kind, "variance": variance}


def resolve_config(raw: dict, seed_override=None, out_override=None) -> dict:
    """Validate a raw config dict and materialize every default.

    Worker-count flags deliberately stay out of the resolved dict: outputs
    must be byte-identical for any --threads value.
    """
    for key in raw:
        if key not in ("model", "solver", "mc", "predict", "verify", "output"):
            raise ConfigError(key, "unknown top-level block")
    model_block = raw.get("model")
    if not isinstance(model_block, dict):
        raise ConfigError("model", "required block is missing")
    # YAML 1.1 reads a bare `true:` key as the boolean; accept it as "true"
    model_block = {("true" if k is True else k): v for k, v in model_block.items()}
    beta = float(_require(model_block, "beta", "model", (int, float)))
    if beta <= 0:
        raise ConfigError("model.beta", "must be positive")
    true_block = _require(model_block, "true", "model", dict)
    true_prior = _resolve_prior(_require(true_block, "prior", "model.true", dict),
                                "model.true.prior")
    true_channel = _resolve_channel(_require(true_block, "channel", "model.true", dict),
                                    "model.true.channel")
    post_block = model_block.get("postulated")
    if post_block is None:
        post_prior, post_channel = copy.deepcopy(true_prior), copy.deepcopy(true_channel)
        matched = True
    else:
        post_prior = _resolve_prior(_require(post_block, "prior", "model.postulated", dict),
                                    "model.postulated.prior")
        post_channel = _resolve_channel(
            _require(post_block, "channel", "model.postulated", dict),
            "model.postulated.channel")
        matched = post_prior == true_prior and post_channel == true_channel
    declared = model_block.get("matched")
    if declared is not None and bool(declared) != matched:
        raise ConfigError("model.matched",
                          f"declared matched={declared} but the model blocks are "
                          f"{'matched' if matched else 'mismatched'}")

    resolved = {
        "model": {
            "beta": beta,
            "true": {"prior": true_prior, "channel": true_channel},
            "postulated": {"prior": post_prior, "channel": post_channel},
            "matched": matched,
        },
        "solver": _merge_defaults(raw.get("solver"), DEFAULTS["solver"], "solver"),
        "mc": _merge_defaults(raw.get("mc"), DEFAULTS["mc"], "mc"),
        "predict": _merge_defaults(raw.get("predict"), DEFAULTS["predict"], "predict"),
        "verify": _merge_defaults(raw.get("verify"), DEFAULTS["verify"], "verify"),
        "output": _merge_defaults(raw.get("output"), DEFAULTS["output"], "output"),
    }

    if seed_override is not None:
        resolved["mc"]["seed"] = int(seed_override)
    if out_override is not None:
        resolved["output"]["dir"] = str(out_override)

    shapes = resolved["mc"]["shapes"]
    if not isinstance(shapes, list):
        raise ConfigError("mc.shapes", "must be a list of {K, N} mappings")
    for i, s in enumerate(shapes):
        if not isinstance(s, dict) or "K" not in s or "N" not in s:
            raise ConfigError(f"mc.shapes[{i}]", "must be a mapping with K and N")
        K, N = int(s["K"]), int(s["N"])
        if K < 1 or N < 1:
            raise ConfigError(f"mc.shapes[{i}]", "K and N must be >= 1")
        if abs(K / N - beta) > 1e-12:
            raise ConfigError(f"mc.shapes[{i}]",
                              f"K/N = {K / N} differs from model.beta = {beta}")
        shapes[i] = {"K": K, "N": N}
    if resolved["mc"]["ensemble"] not in ("gaussian", "rademacher"):
        raise ConfigError("mc.ensemble", f"unknown ensemble {resolved['mc']['ensemble']!r}")
    if resolved["mc"]["sampler"] not in ("enumeration", "gibbs", "gaussian"):
        raise ConfigError("mc.sampler", f"unknown sampler {resolved['mc']['sampler']!r}")
    if int(resolved["mc"]["L"]) < 1:
        raise ConfigError("mc.L", "must be >= 1")
    level = resolved["verify"]["bootstrap"]["level"]
    if not 0.0 < level < 1.0:
        raise ConfigError("verify.bootstrap.level", "must lie in (0, 1)")
    return resolved


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(canonical_json(resolved).encode()).hexdigest()


def model_hash(resolved: dict) -> str:
    """Hash of the model block only; predictions and samples must agree on it."""
    return hashlib.sha256(canonical_json(resolved["model"]).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Object construction from resolved configs
# ---------------------------------------------------------------------------

def build_prior(spec: dict):
    kind = spec["kind"]
    if kind == "bpsk":
        return bpsk()
    if kind == "gaussian":
        return gaussian_prior(spec["variance"])
    if kind == "bernoulli_gaussian":
        return bernoulli_gaussian(spec["sparsity"], spec["variance"])
    if kind == "discrete":
        return discrete_prior(spec["atoms"], spec["probs"])
    if kind == "block":
        import numpy as np

        return BlockPrior(atoms=tuple(spec["atoms"]),
                          table=np.asarray(spec["table"], dtype=float),
                          rest=build_prior(spec["rest"]))
    raise ConfigError("prior.kind", f"unknown kind {kind!r}")


def build_channel(spec: dict):
    return GaussianChannel(spec["variance"])


def build_model(resolved: dict) -> ChannelModel:
    m = resolved["model"]
    return ChannelModel(
        true_prior=build_prior(m["true"]["prior"]),
        true_channel=build_channel(m["true"]["channel"]),
        post_prior=build_prior(m["postulated"]["prior"]),
        post_channel=build_channel(m["postulated"]["channel"]),
        beta=m["beta"],
    )


def build_solver_options(resolved: dict) -> SolverOptions:
    s = resolved["solver"]
    return SolverOptions(
        tolerance=float(s["tolerance"]),
        damping=float(s["damping"]),
        damping_floor=float(s["damping_floor"]),
        max_iterations=int(s["max_iterations"]),
        initializations=tuple(s["initializations"]),
        quad=QuadOptions(
            hermite_t=int(s["hermite_t"]),
            hermite_u=int(s["hermite_u"]),
            y_tol=float(s["y_tol"]),
            z_tol=float(s["z_tol"]),
            force_quadrature=bool(s["force_quadrature"]),
        ),
    )


def build_shapes(resolved: dict):
    return [SystemShape(K=s["K"], N=s["N"]) for s in resolved["mc"]["shapes"]]


def build_ensemble(resolved: dict) -> MatrixEnsemble:
    return MatrixEnsemble(resolved["mc"]["ensemble"])

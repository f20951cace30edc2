"""Dataset, model and run-configuration files.

Datasets are JSON lines, one sequence per line:
``{"T": 10.0, "events": [{"t": 0.5, "k": 1}, ...]}`` with events sorted by
time and types numbered from 1.  Models are a single JSON document holding
the architecture, unconstrained kernel parameters and base rates.
"""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .mcem import FittedModel, MCEMConfig
from .mcmc import ChainConfig, MoveProbs
from .model import Architecture, EventSequence, KernelParams, SequenceParams

MODEL_FORMAT = "dnsp-model"
MODEL_VERSION = 1


class FormatError(ValueError):
    """Malformed dataset, model or configuration file."""


# -- datasets --------------------------------------------------------------------------


def sequence_from_json(obj: dict, n_types: int | None = None, where: str = "") -> EventSequence:
    if not isinstance(obj, dict) or set(obj) != {"T", "events"}:
        raise FormatError(f"{where}expected an object with keys 'T' and 'events'")
    T = obj["T"]
    if not isinstance(T, (int, float)) or isinstance(T, bool) or not T > 0:
        raise FormatError(f"{where}'T' must be a positive number")
    times, types = [], []
    for j, ev in enumerate(obj["events"]):
        if not isinstance(ev, dict) or set(ev) != {"t", "k"}:
            raise FormatError(f"{where}event {j} must have keys 't' and 'k'")
        t, k = ev["t"], ev["k"]
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise FormatError(f"{where}event {j}: type must be an integer >= 1")
        if n_types is not None and k > n_types:
            raise FormatError(f"{where}event {j}: type {k} exceeds the declared {n_types} types")
        if not isinstance(t, (int, float)) or isinstance(t, bool) or not 0 <= t <= T:
            raise FormatError(f"{where}event {j}: time must lie in [0, T]")
        if times and t < times[-1]:
            raise FormatError(f"{where}events are not sorted by time")
        times.append(float(t))
        types.append(k - 1)
    K = n_types if n_types is not None else (max(types) + 1 if types else 1)
    times_a = np.array(times)
    types_a = np.array(types, dtype=int)
    try:
        return EventSequence(float(T), tuple(times_a[types_a == k] for k in range(K)))
    except ValueError as exc:
        raise FormatError(f"{where}{exc}") from exc


def sequence_to_json(seq: EventSequence) -> dict:
    times, types = seq.merged()
    return {"T": seq.T, "events": [{"t": float(t), "k": int(k) + 1} for t, k in zip(times, types)]}


def load_dataset(path, n_types: int | None = None) -> list[EventSequence]:
    """Read a JSON-lines dataset; every sequence gets the same number of types.

    Without ``n_types`` the largest type index in the file is used.
    """
    objs = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                objs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {i}: {exc}") from exc
    if n_types is None:
        ks = [ev.get("k", 1) for o in objs if isinstance(o, dict) for ev in o.get("events", [])
              if isinstance(ev, dict) and isinstance(ev.get("k", 1), int)]
        n_types = max(ks) if ks else 1
    return [sequence_from_json(o, n_types, f"line {i}: ") for i, o in enumerate(objs, 1)]


def dumps_dataset(seqs: list[EventSequence]) -> str:
    return "".join(json.dumps(sequence_to_json(s)) + "\n" for s in seqs)


def save_dataset(seqs: list[EventSequence], path):
    Path(path).write_text(dumps_dataset(seqs))


# -- models ----------------------------------------------------------------------------


def _node_out(n):
    return [n[0], n[1] + 1]


def _node_in(v, where):
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) for x in v) and v[1] >= 1):
        raise FormatError(f"{where}: a node is [layer, index] with index >= 1")
    return (v[0], v[1] - 1)


def _params_out(sp: SequenceParams) -> dict:
    return {
        "mu": list(sp.mu),
        "mu_virtual": [{"node": _node_out(n), "value": v} for n, v in sorted(sp.mu_virtual.items())],
    }


def _params_in(obj, where) -> SequenceParams:
    try:
        return SequenceParams(tuple(obj["mu"]),
                              {_node_in(d["node"], where): float(d["value"]) for d in obj["mu_virtual"]})
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from exc


def model_to_json(model: FittedModel) -> dict:
    arch = model.arch

    def edges(mapping, keys):
        return [{"from": _node_out(e[0]), "to": _node_out(e[1]), "u": [float(x) for x in mapping[e].unconstrained()]}
                for e in keys]

    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "architecture": {
            "K": list(arch.K),
            "wiring": arch.wiring,
            "real_edges": edges(arch.real_edges, arch.real_keys),
            "virtual_edges": edges(arch.virtual_edges, arch.virtual_keys),
        },
        "default_params": _params_out(model.default_params),
        "sequence_params": [_params_out(sp) for sp in model.seq_params],
    }


def model_from_json(obj: dict) -> FittedModel:
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise FormatError("not a model file")
    if obj.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {obj.get('version')!r}")
    try:
        a = obj["architecture"]

        def edges(items, kind):
            out = {}
            for j, d in enumerate(items):
                e = (_node_in(d["from"], f"{kind} edge {j}"), _node_in(d["to"], f"{kind} edge {j}"))
                out[e] = KernelParams(*(float(x) for x in d["u"]))
            return out

        arch = Architecture(tuple(a["K"]), edges(a["real_edges"], "real"), edges(a["virtual_edges"], "virtual"),
                            a.get("wiring", "explicit"))
        default = _params_in(obj["default_params"], "default_params")
        seqs = [_params_in(p, f"sequence_params[{i}]") for i, p in enumerate(obj.get("sequence_params", []))]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"invalid model: {exc}") from exc
    return FittedModel(arch, default, seqs, [])


def dumps_model(model: FittedModel) -> str:
    return json.dumps(model_to_json(model), indent=2) + "\n"


def save_model(model: FittedModel, path):
    Path(path).write_text(dumps_model(model))


def load_model(path) -> FittedModel:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not JSON: {exc}") from exc
    return model_from_json(obj)


# -- run configuration -----------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COUNT = {"type": "integer", "minimum": 0}
_POS_COUNT = {"type": "integer", "minimum": 1}

_CHAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "burn_in": _COUNT,
        "n_samples": _POS_COUNT,
        "thin": _POS_COUNT,
        "move_probs": {
            "type": "object",
            "additionalProperties": False,
            "required": ["resample", "flip", "swap"],
            "properties": {"resample": {"type": "number", "minimum": 0}, "flip": {"type": "number", "minimum": 0},
                           "swap": {"type": "number", "minimum": 0}},
        },
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": _COUNT,
        "backend": {"enum": ["python", "cython", None]},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "wiring": {"enum": ["n-hidden", "fully-connected"]},
                "n_hidden": _POS_COUNT,
                "K": {"type": "array", "items": _POS_COUNT, "minItems": 2},
                "n_types": _POS_COUNT,
            },
        },
        "chain": _CHAIN,
        "mcem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "r": _POS,
                "r_tilde": _POS,
                "adam_betas": {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                               "minItems": 2, "maxItems": 2},
                "adam_eps": _POS,
                "alpha_fd_step": _POS,
                "max_iters": _POS_COUNT,
                "loglik_tol": _POS,
                "batch": _COUNT,
                "warm_burn_in": _COUNT,
                "fit_virtual": {"type": "boolean"},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_sequences": _COUNT, "T": _POS, "sidecar": {"type": "boolean"}},
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"chain": _CHAIN, "refit_rounds": _POS_COUNT},
        },
        "predict": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"chain": _CHAIN, "n_mc": _POS_COUNT, "horizon_factor": _POS},
        },
    },
}


def validate_config(obj) -> dict:
    try:
        jsonschema.validate(obj, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"config error at {path}: {exc.message}") from exc
    return obj


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"config is not JSON: {exc}") from exc
    return validate_config(obj)


def chain_config(obj: dict | None, default: ChainConfig = ChainConfig()) -> ChainConfig:
    if not obj:
        return default
    mp = obj.get("move_probs")
    try:
        probs = MoveProbs(mp["resample"], mp["flip"], mp["swap"]) if mp else default.move_probs
        return ChainConfig(obj.get("burn_in", default.burn_in), obj.get("n_samples", default.n_samples),
                           obj.get("thin", default.thin), probs)
    except ValueError as exc:
        raise FormatError(f"config error in chain settings: {exc}") from exc


def mcem_config(cfg: dict) -> MCEMConfig:
    m = dict(cfg.get("mcem", {}))
    if "adam_betas" in m:
        m["adam_betas"] = tuple(m["adam_betas"])
    try:
        return MCEMConfig(chain=chain_config(cfg.get("chain"), MCEMConfig().chain), **m)
    except ValueError as exc:
        raise FormatError(f"config error in mcem settings: {exc}") from exc

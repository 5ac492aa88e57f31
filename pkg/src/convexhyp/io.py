"""Problem spec files: JSON schema, loading, and number formatting."""
from __future__ import annotations

import json
import math
from typing import Dict

import jsonschema
import numpy as np

from .errors import ValidationError
from .schemes import DiscreteFactor, GaussianFactor, PoissonFactor, ProductScheme
from .sets import LinearImage, PolytopeSpec

__all__ = ["SPEC_SCHEMA", "load_spec", "validate_spec", "scheme_from_dict", "scheme_to_dict",
           "sets_from_dict", "fmt6", "to_jsonable"]

_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}
_row = {"type": "object", "required": ["a", "b"], "properties": {"a": _vec, "b": _num}}

_SET = {
    "type": "object",
    "required": ["dim"],
    "properties": {
        "dim": {"type": "integer", "minimum": 1},
        "lower": _vec,
        "upper": _vec,
        "ineq": {"type": "array", "items": _row},
        "eq": {"type": "array", "items": _row},
        "map": _mat,
        "offset": _vec,
    },
}

_FACTOR = {
    "type": "object",
    "required": ["kind", "dim"],
    "properties": {
        "kind": {"enum": ["gaussian", "poisson", "discrete"]},
        "dim": {"type": "integer", "minimum": 1},
        "repeat": {"type": "integer", "minimum": 1},
        "cov": _mat,
        "margin": {"type": "number", "exclusiveMinimum": 0},
    },
}

_TASK_REQUIRED = {
    "pair": ["scheme", "sets"],
    "simulate": ["scheme", "sets"],
    "union": ["scheme", "sets", "groups"],
    "multitest": ["scheme", "sets", "hypotheses"],
    "multiple-unions": ["scheme", "sets", "hypotheses", "blocks"],
    "markov": ["chains"],
    "sensor": ["sensor"],
    "functional": ["functional"],
    "pet": ["pet"],
}

SPEC_SCHEMA = {
    "type": "object",
    "required": ["spec_version", "task"],
    "properties": {
        "spec_version": {"const": 1},
        "task": {"enum": sorted(_TASK_REQUIRED)},
        "scheme": {"type": "object", "required": ["factors"],
                   "properties": {"factors": {"type": "array", "minItems": 1, "items": _FACTOR}}},
        "sets": {"type": "object", "additionalProperties": _SET},
        "seed": {"type": "integer", "minimum": 0},
        "reps": {"type": "integer", "minimum": 1},
        "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eps_target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "groups": {"type": "object", "required": ["X", "Y"],
                   "properties": {"X": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                                  "Y": {"type": "array", "items": {"type": "string"}, "minItems": 1}}},
        "hypotheses": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "closeness": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                                 "minItems": 2, "maxItems": 2}},
        "blocks": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 1}}},
        "chains": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "object"}},
        "sensor": {"type": "object"},
        "functional": {"type": "object"},
        "pet": {"type": "object"},
    },
}


def _finite(obj, path="spec"):
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValidationError("%s: numeric fields must be finite" % path)
    if isinstance(obj, dict):
        for k, v in obj.items():
            _finite(v, "%s.%s" % (path, k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _finite(v, "%s[%d]" % (path, i))


def validate_spec(d) -> dict:
    try:
        jsonschema.validate(d, SPEC_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError("schema violation at %s: %s" % (where, exc.message)) from None
    _finite(d)
    missing = [k for k in _TASK_REQUIRED[d["task"]] if k not in d]
    if missing:
        raise ValidationError("task %r needs field(s) %s" % (d["task"], ", ".join(missing)))
    names = set(d.get("sets", {}))
    refs = list(d.get("hypotheses", []))
    if "groups" in d:
        refs += d["groups"]["X"] + d["groups"]["Y"]
    if d["task"] in ("pair", "simulate"):
        refs += ["X", "Y"]
    undefined = sorted(set(r for r in refs if r not in names))
    if undefined:
        raise ValidationError("undefined set name(s): %s" % ", ".join(undefined))
    return d


def load_spec(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh, parse_constant=lambda c: float(c))
    except json.JSONDecodeError as exc:
        raise ValidationError("malformed JSON in %s: %s" % (path, exc)) from None
    except OSError as exc:
        raise ValidationError("cannot read %s: %s" % (path, exc)) from None
    return validate_spec(d)


def scheme_from_dict(d: dict) -> ProductScheme:
    fs = []
    for f in d["factors"]:
        kind = f["kind"]
        rep = int(f.get("repeat", 1))
        if kind == "gaussian":
            fs.append(GaussianFactor(int(f["dim"]), f.get("cov"), rep))
        elif kind == "poisson":
            fs.append(PoissonFactor(int(f["dim"]), rep, float(f.get("margin", 1e-9))))
        else:
            fs.append(DiscreteFactor(int(f["dim"]), rep, float(f.get("margin", 1e-9))))
    return ProductScheme(tuple(fs))


def scheme_to_dict(s: ProductScheme) -> dict:
    out = []
    for f in s.factors:
        d = {"kind": f.kind, "dim": f.dim, "repeat": f.repeat}
        if f.kind == "gaussian":
            d["cov"] = f.cov.tolist()
        else:
            d["margin"] = f.margin
        out.append(d)
    return {"factors": out}


def sets_from_dict(d: dict) -> Dict[str, object]:
    out = {}
    for name, sd in d.items():
        if "map" in sd or "offset" in sd:
            out[name] = LinearImage.from_dict(sd)
        else:
            out[name] = PolytopeSpec.from_dict(sd)
    return out


def fmt6(v) -> str:
    """Six significant digits; integers and None pass through."""
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return "%.6g" % v


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj

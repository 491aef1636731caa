"""Scenario configuration: YAML documents validated against a versioned schema."""

import ast
import copy
import hashlib
import json
import operator
from fractions import Fraction

import jsonschema
import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1

_number = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^-?\d+(/\d+)?$|^-?\d*\.\d+$"}]}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["version", "name", "mode", "suites"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "mode": {"enum": ["exact", "float", "mc"]},
        "seed": {"type": "integer", "minimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "description": {"type": "string"},
        "anchor": {"type": "string"},
        "space": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["coin", "regime", "random", "trivial"]},
                "K": {"type": "integer", "minimum": 1, "maximum": 12},
                "n": {"type": "integer", "minimum": 2, "maximum": 4096},
                "p": _number,
                "T": {"type": "number", "exclusiveMinimum": 0},
                "kappa": {"type": "number", "minimum": 0},
            },
        },
        "tau": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["cox", "independent", "argmax", "first_passage", "stopping", "generic"]},
                "hazard": _number,
                "law": {"type": "array", "items": _number, "minItems": 2},
                "level": {"type": "number"},
            },
        },
        "density": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["fh", "exponential", "f-infinity", "independence"]},
                "F": {"type": "string"},
                "z": _number,
                "H": _number,
                "drift": _number,
            },
        },
        "claim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"z": {"oneOf": [_number, {"type": "array", "items": _number}]}, "F": {"type": "string"}},
        },
        "refinement": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "families": {"type": "array", "items": {"enum": ["constant", "stochastic"]}, "minItems": 1},
                "Ks": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 3},
                "min_order": {"type": "number"},
            },
        },
        "kusuoka": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "coupling": {"type": "number"},
                "sigma1": {"type": "number", "exclusiveMinimum": 0},
                "sigma2": {"type": "number", "minimum": 0},
                "x0": {"type": "number"},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "n_paths": {"type": "integer", "minimum": 100},
                "n_steps": {"type": "integer", "minimum": 2},
                "null_replications": {"type": "integer", "minimum": 0},
                "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "suites": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"enum": ["hypothesis", "measure", "representation", "refinement", "kusuoka"]},
        },
    },
}

_NEEDS = {
    "hypothesis": ("space", "tau"),
    "measure": ("space", "tau", "density"),
    "representation": ("space", "tau", "claim"),
    "refinement": ("refinement",),
    "kusuoka": ("kusuoka",),
}


def validate(doc):
    """Schema check plus cross-field rules; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}") from None
    for suite in doc["suites"]:
        for key in _NEEDS[suite]:
            if key not in doc:
                raise ConfigError(f"suite {suite!r} needs a {key!r} section")
    if doc["mode"] == "mc" and set(doc["suites"]) - {"kusuoka", "refinement"}:
        raise ConfigError("mc mode runs only the kusuoka and refinement suites")
    if "density" in doc and doc["density"]["family"] == "fh" and "F" not in doc["density"]:
        raise ConfigError("fh density needs a terminal factor F")
    for sec in ("claim", "density"):
        if "F" in doc.get(sec, {}):
            parse_expression(doc[sec]["F"])
    return doc


def load(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed YAML in {path}: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return validate(doc)


def config_hash(doc):
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def number(x, exact):
    """Config scalar as ``Fraction`` (exact) or ``float``."""
    if exact:
        return Fraction(x) if not isinstance(x, float) else Fraction(x).limit_denominator(10**9)
    return float(Fraction(x)) if isinstance(x, str) else float(x)


# -- terminal-function expressions ---------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_expression(text):
    """Arithmetic in the variable ``x`` (terminal driver value): ``+ - * / **``, numbers, parentheses."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as err:
        raise ConfigError(f"bad expression {text!r}: {err.msg}") from None
    for node in ast.walk(tree):
        ok = isinstance(node, (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, *_BINOPS, *_UNOPS))
        if not ok or (isinstance(node, ast.Name) and node.id != "x"):
            raise ConfigError(f"unsupported element in expression {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"unsupported constant in expression {text!r}")
    return tree


def evaluate_expression(text, x, exact=False):
    tree = parse_expression(text)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return Fraction(node.value) if exact else float(node.value)
        if isinstance(node, ast.Name):
            return x
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](ev(node.operand))
        return _BINOPS[type(node.op)](ev(node.left), ev(node.right))

    return ev(tree)


# -- built-in scenarios ----------------------------------------------------------

CATALOG = {
    "cox": {
        "version": 1,
        "name": "cox",
        "anchor": "Cox construction with constant hazard",
        "description": "Constant-hazard Cox time on a three-step coin tree; immersion holds.",
        "mode": "exact",
        "seed": 0,
        "space": {"kind": "coin", "K": 3},
        "tau": {"kind": "cox", "hazard": "1/10"},
        "claim": {"z": "1/2", "F": "1 + x/4"},
        "suites": ["hypothesis", "representation"],
    },
    "independent": {
        "version": 1,
        "name": "independent",
        "anchor": "default time independent of the reference filtration",
        "description": "Default time with a fixed law, independent of a two-step coin tree.",
        "mode": "exact",
        "seed": 0,
        "space": {"kind": "coin", "K": 2},
        "tau": {"kind": "independent", "law": ["1/4", "1/4", "1/2"]},
        "claim": {"z": 1},
        "suites": ["hypothesis", "representation"],
    },
    "argmax": {
        "version": 1,
        "name": "argmax",
        "anchor": "honest time: argmax of a random walk",
        "description": "First time a two-step walk attains its maximum; F_K-measurable, not a stopping time.",
        "mode": "exact",
        "seed": 0,
        "space": {"kind": "coin", "K": 2},
        "tau": {"kind": "argmax"},
        "suites": ["hypothesis"],
    },
    "fh-density": {
        "version": 1,
        "name": "fh-density",
        "anchor": "immersion-preserving FH factorized density",
        "description": "Terminal factor times a pre-default factor with unit conditional mean on a Cox model.",
        "mode": "exact",
        "seed": 0,
        "space": {"kind": "coin", "K": 3},
        "tau": {"kind": "cox", "hazard": "1/5"},
        "density": {"family": "fh", "F": "1 + x/8", "z": "3/4"},
        "suites": ["hypothesis", "measure"],
    },
    "exponential-density": {
        "version": 1,
        "name": "exponential-density",
        "anchor": "exponential density and the Q-Azema supermartingale",
        "description": "Stochastic-exponential density with constant hazard loading H on a Cox model.",
        "mode": "exact",
        "seed": 0,
        "space": {"kind": "coin", "K": 3},
        "tau": {"kind": "cox", "hazard": "1/5"},
        "density": {"family": "exponential", "H": "1/2", "drift": "1/4"},
        "suites": ["measure"],
    },
    "refinement": {
        "version": 1,
        "name": "refinement",
        "anchor": "grid refinement against continuous closed forms",
        "description": "Hazard process, Q-survival and representation residuals as the grid is refined.",
        "mode": "float",
        "seed": 0,
        "refinement": {"families": ["constant", "stochastic"], "Ks": [8, 16, 32, 64, 128], "min_order": 0.9},
        "suites": ["refinement"],
    },
    "kusuoka": {
        "version": 1,
        "name": "kusuoka",
        "anchor": "Kusuoka filtering model",
        "description": "Hidden Brownian X absorbed at zero, observed through Y with drift coupling X.",
        "mode": "mc",
        "seed": 0,
        "kusuoka": {"coupling": 1.0, "n_paths": 10000, "n_steps": 50, "null_replications": 200, "level": 0.01},
        "suites": ["kusuoka"],
    },
}


def catalog_entry(name):
    if name not in CATALOG:
        raise ConfigError(f"unknown scenario {name!r}")
    return validate(copy.deepcopy(CATALOG[name]))


def dump(doc):
    return yaml.safe_dump(doc, sort_keys=False)

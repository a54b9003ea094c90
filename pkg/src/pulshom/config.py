"""YAML experiment configuration.

Top-level sections and their keys (defaults in parentheses):

``motion``
    Either ``preset`` (``empty``, ``static``, ``shuttle``, ``back_and_forth``,
    ``strip``, ``breathing_disk``) with ``params`` (mapping, ``{}``), or an
    explicit program with ``obstacle``, ``keyframes``, ``breathing`` (0),
    ``modulation`` (none) and ``clearance`` (0.02).  Default: the ``shuttle``
    preset.
``discretization``
    ``h`` (1/32), ``n_s`` (16), ``formulation`` (``moving_domain``),
    ``frame`` (``obstacle``), ``map_kind`` (``twist``), ``T`` (0.125),
    ``dt`` (1/512), ``macro_n`` (64), ``eps`` ([1/4, 1/8]), ``micro_h`` (1/16),
    ``micro_dt`` (none, meaning ``eps/32``), ``compare_dt`` (1/32),
    ``blocks`` (none, meaning ``1/max(eps)``).
``physics``
    ``D`` (1, scalar or 2x2), ``f0``/``g0`` (none; expressions in
    ``t, x1, x2, s, y1, y2``), ``u_in`` (``"1"``; initial concentration in
    ``x1, x2``), ``macro_formulation`` (``mass``), ``streamline`` (0),
    ``coefficients`` (none; a mapping with ``D``, ``drift``, ``source``,
    ``theta`` that replaces upscaling in macro runs).
``point``
    ``t`` (0), ``x`` ([0.5, 0.5]), ``grid`` (none; ``{x1: [...], x2: [...]}``
    sample points for spatially varying coefficients).
``outputs``
    ``directory`` (``out``), ``cadence`` (8), ``formats`` ([csv, vtk, plot]).
``sweep``
    ``a`` ([0.05]), ``b`` ([0.1]), ``speed`` ([2.0]).
``verify``
    ``checks`` (all), ``flip_normal`` (false), ``n_s`` (none).

Numbers may be written as fractions such as ``1/32``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math

import yaml

from .errors import ConfigError
from .exprs import Expression
from .microgeom import (
    MotionProgram,
    ObstacleShape,
    back_and_forth_program,
    breathing_disk_program,
    empty_program,
    shuttle_program,
    static_program,
    strip_program,
)

ALL_CHECKS = (
    "zero_advection",
    "lambda_sign",
    "lambda_order",
    "formulation_equivalence",
    "compatibility",
    "spd",
    "mass_conservation",
    "manufactured_convergence",
    "quadrature",
)

# key -> (kind, default); kinds: float, int, str, bool, list, map, expr, matrix, any
SCHEMA = {
    "motion": {
        "preset": ("str", None),
        "params": ("map", None),
        "obstacle": ("any", None),
        "keyframes": ("list", None),
        "breathing": ("float", 0.0),
        "modulation": ("str", None),
        "clearance": ("float", 0.02),
    },
    "discretization": {
        "h": ("float", 1 / 32),
        "n_s": ("int", 16),
        "formulation": ("str", "moving_domain"),
        "frame": ("str", "obstacle"),
        "map_kind": ("str", "twist"),
        "T": ("float", 0.125),
        "dt": ("float", 1 / 512),
        "macro_n": ("int", 64),
        "eps": ("floatlist", [1 / 4, 1 / 8]),
        "micro_h": ("float", 1 / 16),
        "micro_dt": ("float", None),
        "compare_dt": ("float", 1 / 32),
        "blocks": ("int", None),
    },
    "physics": {
        "D": ("matrix", 1.0),
        "f0": ("expr", None),
        "g0": ("expr", None),
        "u_in": ("expr", "1"),
        "macro_formulation": ("str", "mass"),
        "streamline": ("float", 0.0),
        "coefficients": ("map", None),
    },
    "point": {
        "t": ("float", 0.0),
        "x": ("floatlist", [0.5, 0.5]),
        "grid": ("map", None),
    },
    "outputs": {
        "directory": ("str", "out"),
        "cadence": ("int", 8),
        "formats": ("list", ["csv", "vtk", "plot"]),
    },
    "sweep": {
        "a": ("floatlist", [0.05]),
        "b": ("floatlist", [0.1]),
        "speed": ("floatlist", [2.0]),
    },
    "verify": {
        "checks": ("list", list(ALL_CHECKS)),
        "flip_normal": ("bool", False),
        "n_s": ("int", None),
    },
}

CHOICES = {
    ("discretization", "formulation"): ("moving_domain", "transformed"),
    ("discretization", "frame"): ("obstacle", "cell"),
    ("discretization", "map_kind"): ("twist", "blend"),
    ("physics", "macro_formulation"): ("mass", "concentration"),
}

PRESETS = {
    "empty": lambda **kw: empty_program(**kw),
    "static": lambda kind="disk", radius=0.2, half_width=0.1, half_height=0.1, center=(0.5, 0.5), angle=0.0:
        static_program(ObstacleShape(kind, half_width=half_width, half_height=half_height, radius=radius),
                       tuple(center), angle),
    "shuttle": shuttle_program,
    "back_and_forth": back_and_forth_program,
    "strip": strip_program,
    "breathing_disk": breathing_disk_program,
}


def _err(msg, node):
    mark = getattr(node, "start_mark", None)
    if mark is None:
        return ConfigError(msg)
    return ConfigError(msg, mark.line + 1, mark.column + 1)


def _number(node, value, what):
    if isinstance(value, bool):
        raise _err(f"{what}: expected a number, got {value!r}", node)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            expr = Expression(value, ())
        except Exception as exc:  # noqa: BLE001 - report any parse failure at the node
            raise _err(f"{what}: cannot read {value!r} as a number ({exc})", node) from None
        if expr.is_constant:
            v = float(expr())
            if math.isfinite(v):
                return v
    raise _err(f"{what}: expected a number, got {value!r}", node)


def _convert(kind, node, value, what):
    if value is None:
        return None
    if kind == "float":
        return _number(node, value, what)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise _err(f"{what}: expected an integer, got {value!r}", node)
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise _err(f"{what}: expected a string, got {value!r}", node)
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise _err(f"{what}: expected true or false, got {value!r}", node)
        return value
    if kind == "list":
        if not isinstance(value, list):
            raise _err(f"{what}: expected a list", node)
        return value
    if kind == "floatlist":
        if not isinstance(value, list):
            value, items = [value], [node]
        else:
            items = node.value
        return [_number(n, v, what) for n, v in zip(items, value)]
    if kind == "map":
        if not isinstance(value, dict):
            raise _err(f"{what}: expected a mapping", node)
        return value
    if kind == "expr":
        if isinstance(value, bool) or not isinstance(value, (str, int, float)):
            raise _err(f"{what}: expected an expression", node)
        try:
            Expression(str(value), ("t", "x1", "x2", "s", "y1", "y2"))
        except Exception as exc:  # noqa: BLE001
            raise _err(f"{what}: invalid expression {value!r} ({exc})", node) from None
        return str(value)
    if kind == "matrix":
        if isinstance(value, list):
            rows = node.value
            if len(value) != 2 or any(not isinstance(r, list) or len(r) != 2 for r in value):
                raise _err(f"{what}: expected a scalar or a 2x2 matrix", node)
            return [[_number(rows[i].value[j], value[i][j], what) for j in range(2)] for i in range(2)]
        return _number(node, value, what)
    return value


def _mapping_items(node):
    return {k.value: (k, v) for k, v in node.value}


def parse_config(text):
    """Parse and validate YAML text; returns a fully defaulted plain dict."""
    try:
        loader = yaml.SafeLoader(text)
        try:
            root = loader.get_single_node()
            data = loader.construct_document(root) if root is not None else {}
        finally:
            loader.dispose()
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(str(exc.problem), mark.line + 1, mark.column + 1) from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from None
    if data is None:
        data, root = {}, None
    if not isinstance(data, dict):
        raise _err("the configuration must be a mapping of sections", root)
    out = {}
    items = _mapping_items(root) if root is not None else {}
    for key in data:
        if key not in SCHEMA:
            raise _err(f"unknown section {key!r}; expected one of {sorted(SCHEMA)}", items[key][0])
    for section, schema in SCHEMA.items():
        sec = data.get(section) or {}
        sec_node = items.get(section, (None, None))[1]
        if not isinstance(sec, dict):
            raise _err(f"section {section!r} must be a mapping", sec_node)
        sitems = _mapping_items(sec_node) if sec else {}
        for key in sec:
            if key not in schema:
                raise _err(f"unknown key {key!r} in section {section!r}; expected one of {sorted(schema)}",
                           sitems[key][0])
        res = {}
        for key, (kind, default) in schema.items():
            if key in sec:
                val = _convert(kind, sitems[key][1], sec[key], f"{section}.{key}")
                choices = CHOICES.get((section, key))
                if choices and val not in choices:
                    raise _err(f"{section}.{key} must be one of {list(choices)}, got {val!r}", sitems[key][1])
            else:
                val = copy.deepcopy(default)
            res[key] = val
        out[section] = res
    _check_semantics(out, items)
    return out


def _check_semantics(cfg, items):
    motion_node = items.get("motion", (None, None))[1]
    try:
        build_program(cfg["motion"])
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - geometry errors become config errors here
        raise _err(f"motion: {exc}", motion_node) from None
    d = cfg["discretization"]
    for key in ("h", "T", "dt", "micro_h", "compare_dt"):
        if d[key] is not None and d[key] <= 0:
            raise ConfigError(f"discretization.{key} must be positive")
    if len(cfg["point"]["x"]) != 2:
        raise ConfigError("point.x must have two entries")
    unknown = set(cfg["verify"]["checks"]) - set(ALL_CHECKS)
    if unknown:
        raise ConfigError(f"verify.checks: unknown checks {sorted(unknown)}")


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(exc.message, exc.line, exc.column, source=str(path)) from None


def default_config():
    return parse_config("{}")


def build_program(motion):
    """``MotionProgram`` from a ``motion`` section."""
    preset = motion.get("preset")
    explicit = motion.get("obstacle") is not None or motion.get("keyframes")
    if preset is not None and explicit:
        raise ConfigError("motion: give either a preset or an explicit obstacle/keyframes, not both")
    if preset is None and not explicit:
        preset = "shuttle"
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"motion.preset: unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        params = dict(motion.get("params") or {})
        if motion.get("modulation") is not None:
            params["modulation"] = motion["modulation"]
        try:
            return PRESETS[preset](**params)
        except TypeError as exc:
            raise ConfigError(f"motion.params: {exc}") from None
    d = {k: motion[k] for k in ("obstacle", "keyframes", "breathing", "modulation", "clearance")
         if motion.get(k) is not None}
    return MotionProgram.from_dict(d)


def dump_program(program):
    """YAML text of a motion program (round-trips through :func:`load_program`)."""
    return yaml.safe_dump(program.to_dict(), sort_keys=False)


def load_program(text):
    return MotionProgram.from_dict(yaml.safe_load(text))


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def bundled_config_path(name):
    """Path of a configuration shipped in ``pulshom/data`` (``name`` without suffix)."""
    from importlib.resources import files

    path = files("pulshom") / "data" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"no bundled configuration named {name!r}")
    return path

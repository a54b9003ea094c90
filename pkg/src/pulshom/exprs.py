"""Restricted evaluation of scalar expressions given as strings in configs."""

import ast

import numpy as np

from .errors import ConfigError

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub,
    ast.UAdd, ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Mod,
)


class Expression:
    """Scalar expression of named variables, evaluated with numpy broadcasting.

    Only arithmetic, comparisons and a small set of numpy functions are
    accepted; anything else is rejected at construction time.
    """

    def __init__(self, text, variables):
        if isinstance(text, (int, float)):
            text = repr(float(text))
        self.text = str(text)
        self.variables = tuple(variables)
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {self.text!r}: {exc.msg}") from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ConfigError(
                    f"expression {self.text!r} uses unsupported syntax "
                    f"({type(node).__name__})"
                )
            if isinstance(node, ast.Name):
                if node.id not in _FUNCS and node.id not in _CONSTS and node.id not in self.variables:
                    raise ConfigError(f"expression {self.text!r} uses unknown name {node.id!r}")
            if isinstance(node, ast.Call) and not (
                isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            ):
                raise ConfigError(f"expression {self.text!r} calls an unsupported function")
        self._code = compile(tree, "<expr>", "eval")
        names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}
        self.is_constant = not (names & set(self.variables))

    def __call__(self, **values):
        scope = dict(_FUNCS)
        scope.update(_CONSTS)
        scope.update(values)
        shape = np.broadcast(*[np.asarray(values[v]) for v in self.variables if v in values]).shape \
            if values else ()
        out = eval(self._code, {"__builtins__": {}}, scope)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    def __repr__(self):
        return f"Expression({self.text!r})"

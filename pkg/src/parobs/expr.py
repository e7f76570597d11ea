"""A tiny arithmetic expression language for data in experiment configs.

Expressions such as ``"0.5*max(x,0)^2"`` are parsed with :mod:`ast`,
checked against a whitelist and evaluated on numpy arrays by a small
recursive interpreter.  ``^`` means power.  Variables: ``x`` (1D),
``x1``, ``x2`` and ``t``; constants ``pi`` and ``e``; functions ``max``,
``min``, ``exp``, ``abs``, ``log``, ``sqrt``, ``sin``, ``cos``.
"""

import ast
import operator

import numpy as np

FUNCTIONS = {
    "max": np.maximum, "min": np.minimum, "exp": np.exp, "abs": np.abs,
    "log": np.log, "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos,
}
CONSTANTS = {"pi": np.pi, "e": np.e}
VARIABLES = ("x", "x1", "x2", "t")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: np.power}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


class ExpressionError(ValueError):
    pass


def _check(node, text):
    if isinstance(node, ast.Expression):
        return _check(node.body, text)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"only numeric literals are allowed in {text!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in VARIABLES and node.id not in CONSTANTS:
            raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check(node.left, text)
        _check(node.right, text)
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        _check(node.operand, text)
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExpressionError(f"unknown function in {text!r}")
        if node.keywords or not node.args:
            raise ExpressionError(f"bad call to {node.func.id!r} in {text!r}")
        if node.func.id in ("max", "min") and len(node.args) < 2:
            raise ExpressionError(f"{node.func.id} needs at least two arguments in {text!r}")
        if node.func.id not in ("max", "min") and len(node.args) != 1:
            raise ExpressionError(f"{node.func.id} takes one argument in {text!r}")
        for a in node.args:
            _check(a, text)
        return
    raise ExpressionError(f"unsupported syntax {type(node).__name__} in {text!r}")


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in CONSTANTS:
            return CONSTANTS[node.id]
        raise ExpressionError(f"variable {node.id!r} is not available here")
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    fn = FUNCTIONS[node.func.id]
    args = [_eval(a, env) for a in node.args]
    if node.func.id in ("max", "min"):
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return fn(args[0])


class Expression:
    """Parsed expression; call with keyword arrays ``x=..., t=...``."""

    def __init__(self, text):
        if not isinstance(text, str) or not text.strip():
            raise ExpressionError("expression must be a non-empty string")
        self.text = text
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
        _check(tree, text)
        self._tree = tree.body
        self.names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} & set(VARIABLES)

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __call__(self, **env):
        with np.errstate(all="ignore"):
            out = _eval(self._tree, env)
        return np.asarray(out, dtype=float)

    def spatial(self, n):
        """Callable ``f(*coords)`` for use as spatial data on an ``n``-dimensional grid."""
        if "t" in self.names:
            raise ExpressionError(f"{self.text!r} must not depend on t")
        return lambda *xs: self(**_coords(xs, n))

    def space_time(self, n):
        """Callable ``g(*coords, t)``."""
        return lambda *args: self(**_coords(args[:-1], n), t=args[-1])


def _coords(xs, n):
    if len(xs) != n:
        raise ExpressionError(f"expected {n} coordinates, got {len(xs)}")
    env = {f"x{i + 1}": x for i, x in enumerate(xs)}
    if n == 1:
        env["x"] = xs[0]
    return env


def parse(text):
    return Expression(text)

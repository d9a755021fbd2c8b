"""Whitelisted arithmetic expressions over coordinate variables.

Grammar: numbers, variables, ``+ - * / ^`` (``**`` also accepted), unary
minus, parentheses and calls to the functions in :data:`FUNCTIONS`.
Expressions compile to vectorized callables on ``(P, d)`` point arrays.
"""
from __future__ import annotations

import ast

import numpy as np

from .errors import ValidationError

FUNCTIONS = {
    "heaviside": (1, lambda x: np.heaviside(x, 0.5)),
    "ramp": (1, lambda x: np.maximum(x, 0.0)),
    "abs": (1, np.abs),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}
CONSTANTS = {"pi": np.pi}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


class Expression:
    """A parsed expression; call it on points of shape ``(P, d)``."""

    def __init__(self, text, variables):
        self.text = text
        self.variables = tuple(variables)
        try:
            tree = ast.parse(text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ValidationError(f"cannot parse expression {text!r}: {exc.msg}") from exc
        problems = []
        self.used = set()
        self._check(tree.body, problems)
        if problems:
            raise ValidationError(f"invalid expression {text!r}: " + "; ".join(problems),
                                  [f"{text!r}: {p}" for p in problems])
        self.tree = tree.body

    def _check(self, node, problems):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                problems.append(f"literal {node.value!r} is not a number")
        elif isinstance(node, ast.Name):
            if node.id in self.variables:
                self.used.add(node.id)
            elif node.id not in CONSTANTS:
                problems.append(f"unknown name {node.id!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                problems.append(f"operator {type(node.op).__name__} not allowed")
            self._check(node.left, problems)
            self._check(node.right, problems)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                problems.append(f"operator {type(node.op).__name__} not allowed")
            self._check(node.operand, problems)
        elif isinstance(node, ast.Call):
            name = node.func.id if isinstance(node.func, ast.Name) else None
            if name not in FUNCTIONS:
                problems.append(f"function {name or ast.dump(node.func)!r} not allowed")
            elif node.keywords or len(node.args) != FUNCTIONS[name][0]:
                problems.append(f"{name} takes {FUNCTIONS[name][0]} positional argument(s)")
            for a in node.args:
                self._check(a, problems)
        else:
            problems.append(f"construct {type(node).__name__} not allowed")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else CONSTANTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        fn = FUNCTIONS[node.func.id][1]
        return fn(*(self._eval(a, env) for a in node.args))

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        env = {name: pts[:, i] for i, name in enumerate(self.variables)}
        out = self._eval(self.tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (len(pts),)).copy()

    def axes(self):
        """Indices of the variables that actually occur."""
        return tuple(i for i, v in enumerate(self.variables) if v in self.used)

    def __repr__(self):
        return f"Expression({self.text!r})"


def coordinate_names(d):
    return [f"x{i + 1}" for i in range(d)]


def compile_expr(text, dim=None, variables=None):
    if variables is None:
        variables = coordinate_names(dim)
    return Expression(str(text), variables)


def matrix_rule(entries, d, antisymmetric=True):
    """Rule for a ``d x d`` matrix field from ``{(i, j): Expression}`` (0-based).

    With ``antisymmetric`` the listed entries are taken as the upper triangle
    and mirrored with a sign; otherwise they are mirrored symmetrically.
    Unlisted entries are zero.  Returns ``(rule, axes_used)``.
    """
    axes = sorted({a for e in entries.values() for a in e.axes()})
    sign = -1.0 if antisymmetric else 1.0

    def rule(p):
        out = np.zeros((len(p), d, d))
        for (i, j), e in entries.items():
            v = e(p)
            out[:, i, j] = v
            if i != j:
                out[:, j, i] = sign * v
        return out

    return rule, tuple(axes)

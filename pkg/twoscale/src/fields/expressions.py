"""Tiny arithmetic grammar for custom coefficients and test functions.

Accepted: numbers, + - * / **, unary minus, parentheses, the functions
sin cos exp sqrt abs, the constant pi, and the coordinate names of the target
space (y, y1, y2 on the cell; x, x1, x2 on the macro domain). The expression is
parsed with ``ast`` and compiled into a numpy closure; nothing is eval'd.
"""
import ast
from typing import Callable, Sequence

import numpy as np

from twoscale.src.errors import ConfigError

_FUNCTIONS = {
    'sin': np.sin,
    'cos': np.cos,
    'exp': np.exp,
    'sqrt': np.sqrt,
    'abs': np.abs,
}
_CONSTANTS = {'pi': np.pi}
_BINARY = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


def _coordinate_names(prefix: str, d: int):
    names = {prefix: 0}
    for i in range(d):
        names[f"{prefix}{i + 1}"] = i
    return names


def _compile(node, coords):
    if isinstance(node, ast.Expression):
        return _compile(node.body, coords)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        c = float(node.value)
        return lambda pts: np.full(len(pts), c)
    if isinstance(node, ast.Name):
        if node.id in coords:
            axis = coords[node.id]
            return lambda pts: pts[:, axis]
        if node.id in _CONSTANTS:
            c = _CONSTANTS[node.id]
            return lambda pts: np.full(len(pts), c)
        raise ConfigError(f"Unknown name '{node.id}' in expression")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _compile(node.operand, coords)
        if isinstance(node.op, ast.USub):
            return lambda pts: -inner(pts)
        return inner
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        op = _BINARY[type(node.op)]
        left = _compile(node.left, coords)
        right = _compile(node.right, coords)
        return lambda pts: op(left(pts), right(pts))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in _FUNCTIONS and len(node.args) == 1 and not node.keywords:
        fn = _FUNCTIONS[node.func.id]
        arg = _compile(node.args[0], coords)
        return lambda pts: fn(arg(pts))
    raise ConfigError(f"Unsupported token '{ast.dump(node)[:40]}' in expression")


def compile_expression(text: str, d: int = 1, prefix: str = 'y') -> Callable[[np.ndarray], np.ndarray]:
    """Compile ``text`` into f(points (N, d)) -> (N,)."""
    try:
        tree = ast.parse(text.strip(), mode='eval')
    except SyntaxError as exc:
        raise ConfigError(f"Cannot parse expression '{text}': {exc.msg}") from exc
    func = _compile(tree, _coordinate_names(prefix, d))

    def evaluate(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != d:
            pts = pts.reshape(-1, d)
        return np.asarray(func(pts), dtype=float)

    evaluate.__doc__ = text
    return evaluate


def split_arguments(text: str) -> Sequence[float]:
    """'2, 1, 1' -> [2.0, 1.0, 1.0]; each argument may itself be an expression."""
    if not text.strip():
        return []
    out = []
    for part in text.split(','):
        value = compile_expression(part, d=1)(np.zeros((1, 1)))[0]
        out.append(float(value))
    return out

"""Restricted evaluation of scalar field expressions given in config files.

Only arithmetic, a fixed set of numpy ufuncs and the coordinate names
``x`` and ``y`` are accepted; anything else raises ``ValueError``.
"""

import ast
import operator

import numpy as np

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "arctan": np.arctan,
    "minimum": np.minimum,
    "maximum": np.maximum,
    "where": np.where,
    "heaviside": lambda t: np.heaviside(t, 1.0),
}

_CONSTANTS = {"pi": np.pi, "e": np.e}

_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}

_COMPARE = {
    ast.Lt: operator.lt,
    ast.LtE: operator.le,
    ast.Gt: operator.gt,
    ast.GtE: operator.ge,
}


def evaluate(expr, coords):
    """Evaluate ``expr`` on coordinate arrays.

    Parameters
    ----------
    expr : str
        Expression such as ``"10*sin(pi*x)"``.
    coords : dict
        Maps ``"x"`` (and ``"y"`` in 2D) to arrays of equal shape.

    Returns
    -------
    numpy.ndarray
        The expression broadcast to the coordinate shape.
    """
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    shape = next(iter(coords.values())).shape
    value = _eval(tree.body, coords)
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()


def _eval(node, coords):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id in coords:
            return coords[node.id]
        if node.id in _CONSTANTS:
            return _CONSTANTS[node.id]
        raise ValueError(f"unknown name {node.id!r} in expression")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        operand = _eval(node.operand, coords)
        return -operand if isinstance(node.op, ast.USub) else operand
    if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
        return _BINARY[type(node.op)](_eval(node.left, coords), _eval(node.right, coords))
    if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _COMPARE:
        left = _eval(node.left, coords)
        right = _eval(node.comparators[0], coords)
        return _COMPARE[type(node.ops[0])](left, right).astype(float)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        func = _FUNCTIONS.get(node.func.id)
        if func is None or node.keywords:
            raise ValueError(f"function {node.func.id!r} is not allowed")
        return func(*[_eval(arg, coords) for arg in node.args])
    raise ValueError(f"unsupported expression element: {ast.dump(node)}")

"""Evaluation of rate and coordinate expressions."""

from __future__ import annotations

import math
from typing import Callable, Mapping

from . import ast as A


class RateError(ValueError):
    """A rate or probability expression evaluated to an invalid value."""


def eval_coord(e, binding: Mapping[str, int]) -> int:
    if isinstance(e, A.CInt):
        return e.value
    if isinstance(e, A.CVar):
        try:
            return binding[e.name]
        except KeyError:
            raise RateError(f"unbound location variable {e.name!r}") from None
    a = eval_coord(e.left, binding)
    b = eval_coord(e.right, binding)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if b == 0:
        raise RateError("modulo by zero in location expression")
    return a % b


def eval_loc(loc, binding: Mapping[str, int]) -> A.Location:
    return tuple(eval_coord(c, binding) for c in loc)


def bind(params, loc: A.Location) -> dict:
    """Map an agent's location variables onto a concrete location."""
    return dict(zip(params, loc))


def _lookup(state):
    if hasattr(state, "count"):
        return state.count
    return lambda name, loc: state.get((name, loc), 0)


def _raw(e, count, params, binding) -> float:
    if isinstance(e, A.Num):
        return e.value
    if isinstance(e, A.Param):
        try:
            return params[e.name]
        except KeyError:
            raise RateError(f"undeclared parameter {e.name!r}") from None
    if isinstance(e, A.Count):
        return float(count(e.agent, eval_loc(e.loc, binding)))
    if isinstance(e, A.Neg):
        return -_raw(e.operand, count, params, binding)
    if isinstance(e, A.Call):
        vals = [_raw(a, count, params, binding) for a in e.args]
        return min(vals) if e.func == "min" else max(vals)
    a = _raw(e.left, count, params, binding)
    b = _raw(e.right, count, params, binding)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if b == 0:
        raise RateError("division by zero")
    return a / b


def check_value(v: float, what: str = "rate", upper: float | None = None) -> float:
    if not math.isfinite(v):
        raise RateError(f"{what} is not finite ({v})")
    if v < 0:
        raise RateError(f"{what} is negative ({v})")
    if upper is not None and v > upper:
        raise RateError(f"{what} exceeds {upper} ({v})")
    return v


def eval_rate_expr(expr, state=None, params: Mapping[str, float] | None = None,
                   binding: Mapping[str, int] | None = None) -> float:
    """Evaluate a rate expression against a population state.

    ``state`` may be a :class:`~mela.semantics.SystemState` or a plain mapping
    ``(agent, location) -> count``; missing entries count as zero. ``binding``
    supplies the acting agent's location variables for ``#A(x, y)`` terms.
    """
    count = _lookup(state if state is not None else {})
    v = _raw(expr, count, params or {}, binding or {})
    return check_value(v)


def eval_probability(expr, state=None, params=None, binding=None) -> float:
    count = _lookup(state if state is not None else {})
    v = _raw(expr, count, params or {}, binding or {})
    return check_value(v, "probability", 1.0)


def is_constant(e) -> bool:
    """True when the expression does not depend on the population state."""
    if isinstance(e, A.Count):
        return False
    if isinstance(e, (A.Num, A.Param)):
        return True
    if isinstance(e, A.Neg):
        return is_constant(e.operand)
    if isinstance(e, A.Call):
        return all(is_constant(a) for a in e.args)
    return is_constant(e.left) and is_constant(e.right)


def is_smooth(e) -> bool:
    """False when the expression uses min/max (non-differentiable in the fluid limit)."""
    if isinstance(e, A.Call):
        return False
    if isinstance(e, A.Neg):
        return is_smooth(e.operand)
    if isinstance(e, A.BinOp):
        return is_smooth(e.left) and is_smooth(e.right)
    return True


def compile_expr(e, params, binding, index: Mapping, what="rate",
                 upper: float | None = None) -> Callable:
    """Compile an expression to a function of a count vector.

    ``index`` maps ``(agent, location)`` to a position in the vector; terms for
    locations outside the space read as zero.
    """

    def build(e):
        if isinstance(e, A.Num):
            v = e.value
            return lambda x: v
        if isinstance(e, A.Param):
            if e.name not in params:
                raise RateError(f"undeclared parameter {e.name!r}")
            v = params[e.name]
            return lambda x: v
        if isinstance(e, A.Count):
            i = index.get((e.agent, eval_loc(e.loc, binding)))
            if i is None:
                return lambda x: 0.0
            return lambda x: float(x[i])
        if isinstance(e, A.Neg):
            f = build(e.operand)
            return lambda x: -f(x)
        if isinstance(e, A.Call):
            fs = [build(a) for a in e.args]
            pick = min if e.func == "min" else max
            return lambda x: pick([f(x) for f in fs])
        f, g = build(e.left), build(e.right)
        if e.op == "+":
            return lambda x: f(x) + g(x)
        if e.op == "-":
            return lambda x: f(x) - g(x)
        if e.op == "*":
            return lambda x: f(x) * g(x)

        def div(x):
            d = g(x)
            if d == 0:
                raise RateError("division by zero")
            return f(x) / d

        return div

    raw = build(e)
    return lambda x: check_value(raw(x), what, upper)

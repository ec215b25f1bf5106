"""Reaction-channel view of a model and its fluid (ODE) approximation.

Every aggregate transition schema of the semantics becomes one reaction
channel: a fixed change vector over ``(agent, location)`` species and a rate
function of the count vector. The same channels drive the stochastic
simulator and the ODE system ``dx/dt = M v(x)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import ast as A
from .expr import compile_expr, is_constant, is_smooth
from .printer import format_location, format_rate
from .semantics import (
    SYMBOL,
    SystemState,
    TransitionLabel,
    context,
    initial_state,
    pair_mode,
)
from .space import eval_destination

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    pass


def species_of(model: A.ModelDef) -> list:
    """Stable species order: agent definition order, then location order."""
    ctx = context(model)
    return [(name, loc) for name in model.agents for loc in ctx.space.locations]


def species_label(key) -> str:
    name, loc = key
    return f"{name}@{format_location(loc)}"


def parse_species_label(text: str):
    name, _, loc = text.partition("@")
    loc = loc.strip("()")
    return name, tuple(int(c) for c in loc.split(","))


@dataclass(frozen=True)
class ReactionChannel:
    id: int
    label: TransitionLabel  # value is NaN when it depends on the state
    delta: tuple  # ((species index, change), ...)
    delta_keys: tuple  # ((agent, location), change), sorted
    reactants: tuple  # species indices whose counts multiply the rate
    self_pair: bool  # both participants drawn from the same species
    env_mult: int  # multiplicity of the initiating environment factor, else 1
    factors: tuple  # floats or callables of the count vector, multiplied left to right
    texts: tuple  # printable form of the factors
    smooth: bool

    @property
    def constant_value(self) -> Optional[float]:
        if any(callable(f) for f in self.factors):
            return None
        return _product(self.factors)

    def multiplicity(self, x) -> float:
        a = self.reactants[0]
        if len(self.reactants) == 1:
            return self.env_mult * x[a] if self.env_mult != 1 else x[a]
        if self.self_pair:
            return x[a] * (x[a] - 1)
        return x[a] * x[self.reactants[1]]

    def value(self, x) -> float:
        return _product([f(x) if callable(f) else f for f in self.factors])

    def rate(self, x) -> float:
        """Channel rate at count vector ``x``; equals the aggregate transition rate at integer states."""
        mult = self.multiplicity(x)
        if mult == 0:
            return 0.0
        return mult * self.value(x)

    def formula(self, species) -> str:
        def s(i):
            return f"[{species_label(species[i])}]"

        a = self.reactants[0]
        if len(self.reactants) == 1:
            mult = s(a) if self.env_mult == 1 else f"{self.env_mult} * {s(a)}"
        elif self.self_pair:
            mult = f"{s(a)} * ({s(a)} - 1)"
        else:
            mult = f"{s(a)} * {s(self.reactants[1])}"
        return " * ".join([mult] + [t for t in self.texts if t != "1.0"])


def _product(fs) -> float:
    v = fs[0]
    for f in fs[1:]:
        v = v * f
    return v


def derive_channels(model: A.ModelDef) -> list:
    """One reaction channel per aggregate transition schema of ``model``.

    Channels whose delta is empty or whose rate is identically zero are left out.
    """
    cache = model.cache.get("channels")
    if cache is not None:
        return cache
    ctx = context(model)
    species = species_of(model)
    index = {k: i for i, k in enumerate(species)}
    params = ctx.params
    channels = []

    def factor(expr, binding, what, upper=None):
        if is_constant(expr):
            f = compile_expr(expr, params, binding, index, what, upper)
            return f(None), format_rate(expr)
        return compile_expr(expr, params, binding, index, what, upper), format_rate(expr)

    def branches(cap, name, loc):
        """Own outcomes as (delta, probability factor, text)."""
        act, cont = cap.action, cap.prefix.continuation
        if act.mode == A.DESTROY:
            return [({(name, loc): -1}, 1.0, "1.0")]
        dest = cont.dest
        if isinstance(dest, A.Empirical) and not all(is_constant(p) for _, p in dest.entries):
            probs = _dynamic_empirical(dest, cap.binding, params, index, ctx.space)
        else:
            dist = eval_destination(dest, loc, None, ctx.space, params, cap.binding)
            probs = [(t, p, repr(p)) for t, p in dist.items()]
        out = []
        for target, p, text in probs:
            d = {}
            if act.mode == A.KEEP:
                d[(name, loc)] = -1
            d[(cont.agent, target)] = d.get((cont.agent, target), 0) + 1
            out.append((d, p, text))
        return out

    def add(label, delta, reactants, self_pair, env_mult, factors, texts, smooth):
        keys = tuple(sorted((k, v) for k, v in delta.items() if v))
        if not keys:
            return
        fs = tuple(factors)
        if not any(callable(f) for f in fs) and _product(fs) == 0:
            return
        value = _product(fs) if not any(callable(f) for f in fs) else math.nan
        label = TransitionLabel(label[0], label[1], label[2], value, label[3])
        channels.append(ReactionChannel(
            len(channels), label, tuple((index[k], v) for k, v in keys), keys,
            tuple(reactants), self_pair, env_mult, fs, tuple(texts), smooth))

    for name in model.agents:
        for loc in ctx.space.locations:
            ia = index[(name, loc)]
            for cap in ctx.capabilities(name, loc):
                act = cap.action
                if act.kind == A.NO_INFLUENCE:
                    r, rt = factor(act.value, cap.binding, "rate")
                    for d, p, pt in branches(cap, name, loc):
                        add((SYMBOL[act.mode], None, act.name, loc), d, (ia,), False, 1,
                            (r, p), (rt, pt), is_smooth(act.value))
                elif act.kind == A.INFLUENCE:
                    r, rt = factor(act.value, cap.binding, "rate")
                    L = ctx.targets(act.targets, cap.binding, loc)
                    own = branches(cap, name, loc)
                    for qname in model.agents:
                        for qloc in L:
                            for qcap in ctx.passive(qname, qloc, act.name):
                                p, ptext = factor(qcap.action.value, qcap.binding, "probability", 1.0)
                                ib = index[(qname, qloc)]
                                mode = pair_mode(act.mode, qcap.action.mode)
                                smooth = is_smooth(act.value) and is_smooth(qcap.action.value)
                                for da, pa, pat in own:
                                    for db, pb, pbt in branches(qcap, qname, qloc):
                                        delta = dict(da)
                                        for k, v in db.items():
                                            delta[k] = delta.get(k, 0) + v
                                        add((mode, L, act.name, qloc), delta, (ia, ib), ia == ib, 1,
                                            (r, p, pa, pb), (rt, ptext, pat, pbt), smooth)

    env_counts = initial_state(model).env
    for env in model.env_factors:
        k = env_counts.get(env.name, 0)
        if k == 0:
            continue
        L = ctx.targets(env.targets, {}, None)
        r, rt = factor(env.rate, {}, "rate")
        for qname in model.agents:
            for qloc in L:
                for qcap in ctx.passive(qname, qloc, env.action):
                    p, ptext = factor(qcap.action.value, qcap.binding, "probability", 1.0)
                    ib = index[(qname, qloc)]
                    for db, pb, pbt in branches(qcap, qname, qloc):
                        add((pair_mode(A.KEEP, qcap.action.mode), L, env.action, qloc), db, (ib,), False, k,
                            (r, p, pb), (rt, ptext, pbt), is_smooth(env.rate) and is_smooth(qcap.action.value))

    model.cache["channels"] = channels
    return channels


def _dynamic_empirical(dest, binding, params, index, space):
    from .expr import eval_loc

    targets = [eval_loc(l, binding) for l, _ in dest.entries]
    fns = [compile_expr(p, params, binding, index, "destination probability", 1.0) for _, p in dest.entries]
    for t in targets:
        if t not in space.index:
            from .space import DestinationError

            raise DestinationError(f"destination {t} is outside the space")

    def checked(i):
        def f(x):
            ps = [g(x) for g in fns]
            total = sum(ps)
            if abs(total - 1.0) > 1e-9:
                from .space import DestinationError

                raise DestinationError(f"destination probabilities sum to {total}, not 1")
            return ps[i]

        return f

    merged = {}
    for i, t in enumerate(targets):
        merged.setdefault(t, []).append(i)
    out = []
    for t, idxs in merged.items():
        parts = [checked(i) for i in idxs]
        f = parts[0] if len(parts) == 1 else (lambda x, parts=parts: sum(g(x) for g in parts))
        out.append((t, f, " + ".join(format_rate(dest.entries[i][1]) for i in idxs)))
    return out


class PropensityKernel:
    """Vectorised evaluation of all channel rates at a count vector."""

    def __init__(self, channels: Sequence[ReactionChannel], clip_pairs: bool = False):
        self.channels = list(channels)
        n = len(self.channels)
        self.static = np.array([c.constant_value is not None for c in self.channels], dtype=bool)
        self.value = np.array([c.constant_value if c.constant_value is not None else 0.0 for c in self.channels])
        self.a = np.array([c.reactants[0] for c in self.channels], dtype=np.intp).reshape(n)
        self.b = np.array([c.reactants[1] if len(c.reactants) == 2 else c.reactants[0] for c in self.channels],
                          dtype=np.intp).reshape(n)
        self.pair = np.array([len(c.reactants) == 2 for c in self.channels], dtype=bool)
        self.selfp = np.array([c.self_pair for c in self.channels], dtype=bool)
        self.env = np.array([float(c.env_mult) for c in self.channels])
        self.dynamic = [j for j, c in enumerate(self.channels) if c.constant_value is None]
        self.clip_pairs = clip_pairs

    def __call__(self, x: np.ndarray) -> np.ndarray:
        xa = x[self.a]
        second = np.where(self.selfp, xa - 1.0, x[self.b])
        mult = np.where(self.pair, xa * second, self.env * xa)
        if self.clip_pairs:
            mult = np.maximum(mult, 0.0)
        rates = mult * self.value
        for j in self.dynamic:
            rates[j] = self.channels[j].rate(x) if mult[j] != 0 else 0.0
            if self.clip_pairs and rates[j] < 0:
                rates[j] = 0.0
        return rates


@dataclass
class StoichiometryMatrix:
    species: list
    channel_ids: list
    matrix: np.ndarray  # species x channels, integer

    def to_matrix_market(self, path) -> None:
        import scipy.io
        import scipy.sparse

        scipy.io.mmwrite(str(path), scipy.sparse.coo_matrix(self.matrix), comment=(
            "rows: " + " ".join(species_label(s) for s in self.species)), field="integer")


def stoichiometry(model_or_channels, species=None) -> StoichiometryMatrix:
    if isinstance(model_or_channels, A.ModelDef):
        species = species_of(model_or_channels)
        channels = derive_channels(model_or_channels)
    else:
        channels = list(model_or_channels)
    n = len(species) if species is not None else 1 + max(i for c in channels for i, _ in c.delta)
    M = np.zeros((n, len(channels)), dtype=np.int64)
    for j, c in enumerate(channels):
        for i, d in c.delta:
            M[i, j] = d
    return StoichiometryMatrix(list(species) if species is not None else list(range(n)), [c.id for c in channels], M)


def ode_rhs(channels: Sequence[ReactionChannel], x) -> np.ndarray:
    """``M v(x)``: the sum over channels of change vector times rate."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c in channels:
        v = c.rate(x)
        for i, d in c.delta:
            out[i] += d * v
    return out


class FluidSystem:
    """The ODE ``dx/dt = M v(x)`` for a model, with vectorised right-hand side."""

    def __init__(self, model: A.ModelDef):
        self.model = model
        self.species = species_of(model)
        self.channels = derive_channels(model)
        self.M = stoichiometry(self.channels, self.species).matrix.astype(float)
        self.kernel = PropensityKernel(self.channels, clip_pairs=True)

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return self.M @ self.kernel(x)

    def jacobian(self, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
        """d(rhs)/dx: exact for mass-action channels, central differences for expression rates."""
        n = len(x)
        dv = np.zeros((len(self.channels), n))
        for j, c in enumerate(self.channels):
            v = c.constant_value
            if v is None:
                for i in range(n):
                    step = h * max(1.0, abs(x[i]))
                    up, down = x.copy(), x.copy()
                    up[i] += step
                    down[i] -= step
                    dv[j, i] = (c.rate(up) - c.rate(down)) / (2 * step)
                continue
            a = c.reactants[0]
            if len(c.reactants) == 1:
                dv[j, a] = c.env_mult * v
            elif c.self_pair:
                dv[j, a] = (2 * x[a] - 1) * v
            else:
                b = c.reactants[1]
                dv[j, a] += x[b] * v
                dv[j, b] += x[a] * v
        return self.M @ dv

    def initial_vector(self, state: SystemState | None = None) -> np.ndarray:
        state = state or initial_state(self.model)
        index = {k: i for i, k in enumerate(self.species)}
        x = np.zeros(len(self.species))
        for key, n in state.items():
            x[index[key]] = n
        return x


@dataclass
class FluidSolution:
    times: np.ndarray
    values: np.ndarray  # len(times) x len(species)
    species: list
    clipped: int = 0

    def series(self, name: str, loc) -> np.ndarray:
        return self.values[:, self.species.index((name, loc))]

    def totals(self, name: str) -> np.ndarray:
        cols = [i for i, (n, _) in enumerate(self.species) if n == name]
        return self.values[:, cols].sum(axis=1)


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(model: A.ModelDef, t_end: float, dt: float = 1e-3, method: str = "rk4",
              grid: Optional[Sequence[float]] = None, x0: Optional[np.ndarray] = None) -> FluidSolution:
    """Integrate the fluid ODE from the model's initial state.

    Fixed-step RK4 by default: each interval between consecutive sample times
    is split into equal steps no longer than ``dt``. Negative components are
    clipped to zero after each step (logged). ``method="adaptive"`` uses
    scipy's RK45 with tight tolerances.
    """
    if t_end <= 0 or dt <= 0:
        raise ValueError("t_end and dt must be positive")
    sysm = FluidSystem(model)
    x = sysm.initial_vector() if x0 is None else np.array(x0, dtype=float)
    if grid is None:
        steps = max(1, int(round(t_end / dt)))
        grid = np.linspace(0.0, t_end, steps + 1)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0.0:
        grid = np.concatenate([[0.0], grid])
    if method == "adaptive":
        from scipy.integrate import solve_ivp

        sol = solve_ivp(lambda t, y: sysm.rhs(y), (0.0, grid[-1]), x, method="RK45",
                        t_eval=grid, rtol=1e-9, atol=1e-12, max_step=dt * 100)
        if not sol.success:
            raise IntegrationError(sol.message)
        return FluidSolution(grid, sol.y.T.copy(), sysm.species)
    if method != "rk4":
        raise ValueError(f"unknown integration method {method!r}")
    out = np.empty((len(grid), len(x)))
    out[0] = x
    clipped = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, len(grid)):
            span = grid[k] - grid[k - 1]
            n = max(1, math.ceil(span / dt - 1e-9))
            h = span / n
            for _ in range(n):
                x = _rk4_step(sysm.rhs, x, h)
                if not np.all(np.isfinite(x)):
                    raise IntegrationError(f"non-finite state near t={grid[k - 1]:g}; the solution blew up")
                if np.any(x < 0):
                    clipped += 1
                    x = np.maximum(x, 0.0)
            out[k] = x
    if clipped:
        log.warning("clipped negative components to zero in %d integration step(s)", clipped)
    return FluidSolution(grid, out, sysm.species, clipped)


def channel_table(model: A.ModelDef) -> str:
    species = species_of(model)
    rows = ["id\taction\tmode\tlocation\tdelta\trate\tsmooth"]
    for c in derive_channels(model):
        delta = " ".join(f"{species_label(k)}:{d:+d}" for k, d in c.delta_keys)
        rows.append(f"{c.id}\t{c.label.action}\t{c.label.mode}\t{format_location(c.label.location)}\t"
                    f"{delta}\t{c.formula(species)}\t{'yes' if c.smooth else 'no'}")
    return "\n".join(rows) + "\n"


def write_solution_csv(sol: FluidSolution, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["time", "series", "value"])
        labels = [species_label(s) for s in sol.species]
        for t, row in zip(sol.times, sol.values):
            for lab, v in zip(labels, row):
                w.writerow([repr(float(t)), lab, repr(float(v))])

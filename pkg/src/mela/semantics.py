"""Operational semantics over population states.

States are kept in congruence-normal form: a multiset of ``(agent, location)``
pairs, so ``P(l)[x] | P(l)[y]`` and ``P(l)[x+y]`` are the same state. The
aggregate transitions emitted here are the CTMC channels: each summarises every
individual (or pair of individuals) that can perform the same step, with the
rate multiplied by the number of such individuals or pairs.

:func:`individual_lts` expands a small state into its individuals and applies
the rules to each of them one at a time. It is exponential and exists to check
the aggregate rates.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional

from . import ast as A
from .expr import RateError, bind, eval_loc, eval_probability, eval_rate_expr
from .printer import format_location
from .space import Space, build_space, eval_destination

SYMBOL = {A.KEEP: ".", A.CREATE: "↑", A.DESTROY: "↓"}
PASSIVE_MARK = "←"


class SemanticsError(RuntimeError):
    pass


class SystemState:
    """Immutable population state: counts per ``(agent, location)`` plus the environment.

    Zero entries are never stored and duplicate keys are summed on construction.
    """

    __slots__ = ("_counts", "_env", "_key")

    def __init__(self, counts=(), env=()):
        c = Counter()
        for key, n in (counts.items() if isinstance(counts, Mapping) else counts):
            name, loc = key
            c[(name, tuple(loc))] += _nonneg(n, key)
        e = Counter()
        for name, n in (env.items() if isinstance(env, Mapping) else env):
            e[name] += _nonneg(n, name)
        self._counts = {k: c[k] for k in sorted(c) if c[k]}
        self._env = {k: e[k] for k in sorted(e) if e[k]}
        self._key = (tuple(self._counts.items()), tuple(self._env.items()))

    def count(self, name: str, loc) -> int:
        return self._counts.get((name, loc), 0)

    def env_count(self, name: str) -> int:
        return self._env.get(name, 0)

    @property
    def counts(self) -> dict:
        return dict(self._counts)

    @property
    def env(self) -> dict:
        return dict(self._env)

    def items(self):
        return self._counts.items()

    def total(self) -> int:
        return sum(self._counts.values())

    def apply(self, delta) -> "SystemState":
        c = dict(self._counts)
        for key, d in (delta.items() if isinstance(delta, Mapping) else delta):
            n = c.get(key, 0) + d
            if n < 0:
                raise SemanticsError(f"transition would make count of {key} negative")
            c[key] = n
        return SystemState(c, self._env)

    def __eq__(self, other):
        return isinstance(other, SystemState) and self._key == other._key

    def __hash__(self):
        return hash(self._key)

    def __repr__(self):
        parts = [f"{n}@{format_location(l)}:{k}" for (n, l), k in self._counts.items()]
        env = [f"{n}:{k}" for n, k in self._env.items()]
        return "{" + ", ".join(parts) + (" | " + ", ".join(env) if env else "") + "}"


def _nonneg(n, key) -> int:
    if int(n) != n or n < 0:
        raise SemanticsError(f"count for {key} must be a nonnegative integer, got {n}")
    return int(n)


@dataclass(frozen=True)
class TransitionLabel:
    mode: str  # . ↑ ↓, or a pair like ↑↓ for influence synchronisations
    influence: Optional[tuple]  # None for no influence, else the resolved target set
    action: str
    value: float
    location: Optional[A.Location]  # None for '-'

    def __str__(self):
        infl = "∅" if self.influence is None else "{" + ",".join(format_location(l) for l in self.influence) + "}"
        return f"({self.mode}, {infl}, {self.action}, {self.value:g}, {format_location(self.location)})"


def mode_net_change(mode: str) -> int:
    return mode.count("↑") - mode.count("↓")


def pair_mode(active: str, passive: str) -> str:
    a, p = SYMBOL[active], SYMBOL[passive]
    return "." if a == p == "." else a + p


@dataclass(frozen=True)
class AggregateTransition:
    label: TransitionLabel
    rate: float
    delta: tuple  # sorted ((agent, location), change) pairs, no zeros

    @property
    def delta_dict(self) -> dict:
        return dict(self.delta)


def freeze_delta(d: Mapping) -> tuple:
    return tuple(sorted((k, v) for k, v in d.items() if v))


# --- compiled view of a model ---


@dataclass(frozen=True)
class Capability:
    """A prefix an agent can perform, with its location variables bound."""

    prefix: A.Prefix
    binding: dict

    @property
    def action(self) -> A.ActionSpec:
        return self.prefix.action


class ModelContext:
    """Derived data shared by the semantic operations: the location set and flattened bodies."""

    def __init__(self, model: A.ModelDef):
        if model.space is None:
            raise SemanticsError("model declares no space")
        self.model = model
        self.space: Space = build_space(model.space)
        self.params = model.params
        self.agent_names = tuple(model.agents)
        self._caps = {}

    def capabilities(self, name: str, loc) -> tuple:
        key = (name, loc)
        caps = self._caps.get(key)
        if caps is None:
            caps = self._caps[key] = tuple(self._flatten(name, loc, ()))
        return caps

    def _flatten(self, name, loc, stack):
        if name in stack:
            raise SemanticsError(f"unguarded recursion through {' -> '.join(stack + (name,))}")
        agent = self.model.agents.get(name)
        if agent is None:
            raise SemanticsError(f"undefined agent {name!r}")
        binding = bind(agent.params, loc)
        for term in A.choice_terms(agent.body):
            if isinstance(term, A.Prefix):
                yield Capability(term, binding)
            elif isinstance(term, A.ConstantRef):
                yield from self._flatten(term.name, eval_loc(term.loc, binding), stack + (name,))

    def passive(self, name: str, loc, action: str) -> list:
        return [c for c in self.capabilities(name, loc) if c.action.kind == A.PASSIVE and c.action.name == action]

    def targets(self, targets, binding, loc) -> tuple:
        """Resolve a location-set expression to the sorted locations it covers."""
        if isinstance(targets, A.Here):
            return (loc,)
        if isinstance(targets, A.AllLocations):
            return self.space.locations
        locs = {eval_loc(l, binding) for l in targets.locations}
        return tuple(sorted(l for l in locs if l in self.space.index))

    def branches(self, cap: Capability, name: str, loc, state) -> list:
        """Own-state outcomes of a prefix: list of (delta, destination probability)."""
        act, cont = cap.prefix.action, cap.prefix.continuation
        if act.mode == A.DESTROY:
            return [({(name, loc): -1}, 1.0)]
        dist = eval_destination(cont.dest, loc, state, self.space, self.params, cap.binding)
        out = []
        for target, p in dist.items():
            d = Counter()
            if act.mode == A.KEEP:
                d[(name, loc)] -= 1
            d[(cont.agent, target)] += 1
            out.append((d, p))
        return out

    def rate(self, expr, state, binding, action, loc) -> float:
        try:
            return eval_rate_expr(expr, state, self.params, binding)
        except RateError as e:
            raise RateError(f"action {action!r} at {format_location(loc)}: {e}") from None

    def probability(self, expr, state, binding, action, loc) -> float:
        try:
            return eval_probability(expr, state, self.params, binding)
        except RateError as e:
            raise RateError(f"action {action!r} at {format_location(loc)}: {e}") from None


def context(model: A.ModelDef) -> ModelContext:
    ctx = model.cache.get("context")
    if ctx is None:
        ctx = model.cache["context"] = ModelContext(model)
    return ctx


# --- operations ---


def initial_state(model: A.ModelDef) -> SystemState:
    counts, env = Counter(), Counter()
    for entry in model.init:
        if entry.loc is None:
            env[entry.name] += entry.count
        else:
            counts[(entry.name, tuple(entry.loc))] += entry.count
    return SystemState(counts, env)


def _merge(*deltas) -> dict:
    out = Counter()
    for d in deltas:
        for k, v in d.items():
            out[k] += v
    return out


def enabled_transitions(model: A.ModelDef, state: SystemState, *, solo_influence: bool = False) -> list:
    """All aggregate transitions enabled in ``state``.

    Self-loops (steps that leave the state unchanged) are not emitted, nor are
    the "no update" branches of influence actions. With ``solo_influence`` an
    influence action whose target set holds no passive partner fires on its
    own, changing only the initiator.
    """
    ctx = context(model)
    out = []
    entries = list(state.items())

    for (name, loc), n in entries:
        for cap in ctx.capabilities(name, loc):
            act = cap.action
            if act.kind == A.NO_INFLUENCE:
                r = ctx.rate(act.value, state, cap.binding, act.name, loc)
                if r == 0:
                    continue
                for d, p in ctx.branches(cap, name, loc, state):
                    delta = freeze_delta(d)
                    value = r * p
                    if not delta or value == 0:
                        continue
                    label = TransitionLabel(SYMBOL[act.mode], None, act.name, value, loc)
                    out.append(AggregateTransition(label, n * value, delta))
            elif act.kind == A.INFLUENCE:
                out.extend(_influence(ctx, state, entries, cap, name, loc, n, solo_influence))

    for env in model.env_factors:
        k = state.env_count(env.name)
        if k == 0:
            continue
        L = ctx.targets(env.targets, {}, None)
        Lset = set(L)
        r = ctx.rate(env.rate, state, {}, env.action, None)
        if r == 0:
            continue
        for (qname, qloc), m in entries:
            if qloc not in Lset:
                continue
            for qcap in ctx.passive(qname, qloc, env.action):
                p = ctx.probability(qcap.action.value, state, qcap.binding, env.action, qloc)
                for db, pb in ctx.branches(qcap, qname, qloc, state):
                    delta = freeze_delta(db)
                    value = r * p * pb
                    if not delta or value == 0:
                        continue
                    mode = pair_mode(A.KEEP, qcap.action.mode)
                    label = TransitionLabel(mode, L, env.action, value, qloc)
                    out.append(AggregateTransition(label, (k * m) * value, delta))
    return out


def _influence(ctx, state, entries, cap, name, loc, n, solo):
    act = cap.action
    r = ctx.rate(act.value, state, cap.binding, act.name, loc)
    if r == 0:
        return []
    L = ctx.targets(act.targets, cap.binding, loc)
    Lset = set(L)
    own = ctx.branches(cap, name, loc, state)
    out = []
    partnered = False
    for (qname, qloc), m in entries:
        if qloc not in Lset:
            continue
        for qcap in ctx.passive(qname, qloc, act.name):
            pairs = n * (n - 1) if (qname, qloc) == (name, loc) else n * m
            if pairs == 0:
                continue
            partnered = True
            p = ctx.probability(qcap.action.value, state, qcap.binding, act.name, qloc)
            theirs = ctx.branches(qcap, qname, qloc, state)
            mode = pair_mode(act.mode, qcap.action.mode)
            for da, pa in own:
                for db, pb in theirs:
                    delta = freeze_delta(_merge(da, db))
                    value = r * p * pa * pb
                    if not delta or value == 0:
                        continue
                    label = TransitionLabel(mode, L, act.name, value, qloc)
                    out.append(AggregateTransition(label, pairs * value, delta))
    if solo and not partnered:
        for da, pa in own:
            delta = freeze_delta(da)
            value = r * pa
            if delta and value:
                label = TransitionLabel(SYMBOL[act.mode], L, act.name, value, loc)
                out.append(AggregateTransition(label, n * value, delta))
    return out


def apply_transition(state: SystemState, t: AggregateTransition) -> SystemState:
    return state.apply(t.delta)


def total_rate(transitions) -> float:
    return sum(t.rate for t in transitions)


# --- individual-level oracle ---

ATOMIC = "atomic"
EFFECTIVE = "effective"
NO_UPDATE = "no-update"
NO_EFFECT = "no-effect"
SOLO = "solo"


@dataclass(frozen=True)
class IndividualTransition:
    label: TransitionLabel
    kind: str
    initiator: object  # index of the acting individual, or the env factor name
    partner: Optional[int]
    delta: tuple
    target: SystemState


def individual_lts(model: A.ModelDef, state: SystemState, max_agents: int = 6) -> list:
    """Transitions of ``state`` read as a parallel composition of single agents.

    Every agent copy is an individual; each rule is applied to each individual
    and each ordered (influencer, influenced) pair separately, including the
    "no update" (value ``r*(1-p)``) and "no effect" outcomes and self-loops.
    """
    if state.total() > max_agents:
        raise SemanticsError(f"state has {state.total()} agents, above the bound of {max_agents}")
    ctx = context(model)
    people = [key for key, n in state.items() for _ in range(n)]
    envs = [name for name, k in state.env.items() for _ in range(k)]
    out = []

    def outcome(key, cap):
        """Components one individual turns into, with their probabilities."""
        name, loc = key
        act, cont = cap.action, cap.prefix.continuation
        if act.mode == A.DESTROY:
            return [([], 1.0)]
        dist = eval_destination(cont.dest, loc, state, ctx.space, ctx.params, cap.binding)
        res = []
        for target, p in dist.items():
            born = [(cont.agent, target)]
            res.append(([key] + born if act.mode == A.CREATE else born, p))
        return res

    def emit(label, kind, initiator, partner, replaced):
        pool = list(people)
        extra = []
        for idx, comps in sorted(replaced.items(), reverse=True):
            pool.pop(idx)
            extra.extend(comps)
        after = Counter(pool + extra)
        before = Counter(people)
        delta = freeze_delta({k: after[k] - before[k] for k in set(after) | set(before)})
        out.append(IndividualTransition(label, kind, initiator, partner, delta, SystemState(after, state.env)))

    for i, key in enumerate(people):
        name, loc = key
        for cap in ctx.capabilities(name, loc):
            act = cap.action
            if act.kind == A.PASSIVE:
                continue
            r = eval_rate_expr(act.value, state, ctx.params, cap.binding)
            if act.kind == A.NO_INFLUENCE:
                for comps, pbar in outcome(key, cap):
                    label = TransitionLabel(SYMBOL[act.mode], None, act.name, r * pbar, loc)
                    emit(label, ATOMIC, i, None, {i: comps})
                continue
            L = ctx.targets(act.targets, cap.binding, loc)
            any_partner = False
            for j, other in enumerate(people):
                if j == i:
                    continue
                qname, qloc = other
                for qcap in ctx.passive(qname, qloc, act.name):
                    p = eval_probability(qcap.action.value, state, ctx.params, qcap.binding)
                    mine = outcome(key, cap)
                    if qloc in L:
                        any_partner = True
                        mode = pair_mode(act.mode, qcap.action.mode)
                        for ca, pa in mine:
                            for cb, pb in outcome(other, qcap):
                                label = TransitionLabel(mode, L, act.name, r * p * pa * pb, qloc)
                                emit(label, EFFECTIVE, i, j, {i: ca, j: cb})
                            label = TransitionLabel(SYMBOL[act.mode], L, act.name, r * (1 - p) * pa, loc)
                            emit(label, NO_UPDATE, i, j, {i: ca})
                    else:
                        for ca, pa in mine:
                            label = TransitionLabel(SYMBOL[act.mode], L, act.name, r * pa, loc)
                            emit(label, NO_EFFECT, i, j, {i: ca})
            if not any_partner:
                for ca, pa in outcome(key, cap):
                    label = TransitionLabel(SYMBOL[act.mode], L, act.name, r * pa, loc)
                    emit(label, SOLO, i, None, {i: ca})

    env_defs = model.env_map
    for ename in envs:
        env = env_defs[ename]
        L = ctx.targets(env.targets, {}, None)
        r = eval_rate_expr(env.rate, state, ctx.params)
        for j, other in enumerate(people):
            qname, qloc = other
            for qcap in ctx.passive(qname, qloc, env.action):
                p = eval_probability(qcap.action.value, state, ctx.params, qcap.binding)
                if qloc in L:
                    mode = pair_mode(A.KEEP, qcap.action.mode)
                    for cb, pb in outcome(other, qcap):
                        label = TransitionLabel(mode, L, env.action, r * p * pb, qloc)
                        emit(label, EFFECTIVE, ename, j, {j: cb})
                    emit(TransitionLabel(".", L, env.action, r * (1 - p), None), NO_UPDATE, ename, j, {})
                else:
                    emit(TransitionLabel(".", L, env.action, r, None), NO_EFFECT, ename, j, {})
    return out


def transition_table(transitions) -> str:
    """Tab-separated listing: action, mode, influence, location, rate, delta."""
    rows = ["action\tmode\tinfluence\tlocation\trate\tdelta"]
    for t in transitions:
        lab = t.label
        infl = "∅" if lab.influence is None else " ".join(format_location(l) for l in lab.influence)
        delta = " ".join(f"{n}@{format_location(l)}:{d:+d}" for (n, l), d in t.delta)
        rows.append(f"{lab.action}\t{lab.mode}\t{infl}\t{format_location(lab.location)}\t{t.rate!r}\t{delta}")
    return "\n".join(rows) + "\n"

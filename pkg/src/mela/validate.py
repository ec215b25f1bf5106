"""Static checks on parsed models."""

from __future__ import annotations

from . import ast as A
from .diagnostics import Diagnostic, ERROR, WARNING
from .expr import RateError, eval_loc, eval_probability, eval_rate_expr, is_constant
from .printer import format_location
from .space import SpaceError, build_space


def _at(node):
    pos = getattr(node, "pos", None)
    return (pos.line, pos.col) if pos else (None, None)


def _diag(severity, message, node=None, code=""):
    line, col = _at(node)
    return Diagnostic(severity, message, line, col, code)


def _coord_vars(e, out):
    if isinstance(e, A.CVar):
        out.add(e.name)
    elif isinstance(e, A.CBin):
        _coord_vars(e.left, out)
        _coord_vars(e.right, out)
    return out


def _loc_vars(loc) -> set:
    out = set()
    for c in loc:
        _coord_vars(c, out)
    return out


def _rate_parts(e, params, counts):
    """Collect parameter and count-term references of a rate expression."""
    if isinstance(e, A.Param):
        params.append(e)
    elif isinstance(e, A.Count):
        counts.append(e)
    elif isinstance(e, A.Neg):
        _rate_parts(e.operand, params, counts)
    elif isinstance(e, A.Call):
        for a in e.args:
            _rate_parts(a, params, counts)
    elif isinstance(e, A.BinOp):
        _rate_parts(e.left, params, counts)
        _rate_parts(e.right, params, counts)


def _dest_locs(dest) -> list:
    if isinstance(dest, A.AtLocation):
        return [dest.loc]
    if isinstance(dest, (A.NewLocation, A.NewOuterLocation)):
        return [dest.args]
    if isinstance(dest, A.UniformOver):
        return list(dest.locations)
    if isinstance(dest, A.Empirical):
        return [l for l, _ in dest.entries]
    return []


def validate(model: A.ModelDef) -> list:
    """Return diagnostics for ``model``; an empty list means it is well-formed.

    Never raises: every problem found is reported as an error or a warning.
    """
    diags = []
    err = lambda msg, node=None, code="": diags.append(_diag(ERROR, msg, node, code))
    warn = lambda msg, node=None, code="": diags.append(_diag(WARNING, msg, node, code))

    space = None
    if model.space is None:
        err("model declares no space", code="space")
    else:
        try:
            space = build_space(model.space)
        except SpaceError as e:
            err(str(e), code="space")
    arity = space.arity if space is not None else None
    nested = isinstance(model.space, A.Nested)

    agents = model.agents
    envs = model.env_map
    active, passive, env_active = {}, {}, {}

    def check_expr(e, vars, owner, what, prob=False):
        params, counts = [], []
        _rate_parts(e, params, counts)
        for p in params:
            if p.name not in model.params:
                err(f"undeclared parameter {p.name!r} in {owner}", p, "param")
        for c in counts:
            if c.agent not in agents:
                err(f"count term refers to undefined agent {c.agent!r} in {owner}", c, "undefined")
            unbound = _loc_vars(c.loc) - set(vars)
            if unbound:
                err(f"unbound location variable(s) {', '.join(sorted(unbound))} in {owner}", c, "unbound")
            if arity is not None and len(c.loc) != arity:
                err(f"count term #{c.agent} has {len(c.loc)} coordinate(s), space needs {arity}", c, "arity")
        if all(p.name in model.params for p in params) and is_constant(e):
            try:
                if prob:
                    eval_probability(e, None, model.params)
                else:
                    eval_rate_expr(e, None, model.params)
            except RateError as ex:
                err(f"{what} of {owner}: {ex}", getattr(e, "pos", None), "value")

    def check_loc(loc, vars, owner, node, literal_must_fit=True):
        unbound = _loc_vars(loc) - set(vars)
        if unbound:
            err(f"unbound location variable(s) {', '.join(sorted(unbound))} in {owner}", node, "unbound")
            return
        if arity is not None and len(loc) != arity:
            err(f"location has {len(loc)} coordinate(s) in {owner}, space needs {arity}", node, "arity")
            return
        if space is not None and literal_must_fit and not _loc_vars(loc):
            concrete = eval_loc(loc, {})
            if concrete not in space:
                err(f"location {format_location(concrete)} outside space in {owner}", node, "location")

    def check_targets(targets, vars, owner, node):
        if isinstance(targets, A.LocationList):
            for loc in targets.locations:
                check_loc(loc, vars, owner, node)

    # agents
    unguarded = {}
    for agent in agents.values():
        owner = f"agent {agent.name}"
        if arity is not None and agent.location_arity != arity:
            err(f"{owner} takes {agent.location_arity} coordinate(s), space needs {arity}", agent, "arity")
        unguarded[agent.name] = []
        for term in A.choice_terms(agent.body):
            if isinstance(term, A.ConstantRef):
                unguarded[agent.name].append(term)
                if term.name not in agents:
                    err(f"undefined agent {term.name!r} referenced in {owner}", term, "undefined")
                elif len(term.loc) != agents[term.name].location_arity:
                    err(f"{term.name} takes {agents[term.name].location_arity} coordinate(s)", term, "arity")
                if term.loc != tuple(A.CVar(v) for v in agent.params):
                    err(f"constant {term.name} in {owner} must be applied to the agent's own location "
                        f"({', '.join(agent.params)})", term, "constant")
                continue
            if not isinstance(term, A.Prefix):
                continue
            act, cont = term.action, term.continuation
            check_expr(act.value, agent.params, f"{owner}, action {act.name}",
                       "probability" if act.kind == A.PASSIVE else "rate", prob=act.kind == A.PASSIVE)
            if act.kind == A.INFLUENCE:
                active.setdefault(act.name, []).append(act)
                check_targets(act.targets, agent.params, f"{owner}, action {act.name}", act)
            elif act.kind == A.PASSIVE:
                passive.setdefault(act.name, []).append(act)
            if cont.agent not in agents:
                err(f"undefined agent {cont.agent!r} in continuation of {owner}", cont, "undefined")
            dest = cont.dest
            if isinstance(dest, A.NewOuterLocation) and not nested:
                err(f"new_v in {owner} requires a nested space", cont, "space")
            if isinstance(dest, A.Empirical):
                for _, p in dest.entries:
                    check_expr(p, agent.params, f"{owner}, action {act.name}", "destination probability", prob=True)
            for loc in _dest_locs(dest):
                check_loc(loc, agent.params, f"{owner}, action {act.name}", cont)
        kinds = {}
        for t in A.choice_terms(agent.body):
            if isinstance(t, A.Prefix) and t.action.kind in (A.INFLUENCE, A.PASSIVE):
                kinds.setdefault(t.action.name, set()).add(t.action.kind)
        for name, ks in kinds.items():
            if len(ks) == 2:
                warn(f"{owner} has both active and passive forms of action {name!r}", agent, "mixed")

    # guardedness: the graph of unguarded constant references must be acyclic
    state = {}

    def visit(name, path):
        state[name] = 1
        for ref in unguarded.get(name, []):
            if ref.name not in unguarded:
                continue
            if state.get(ref.name) == 1:
                cycle = path[path.index(ref.name):] + [ref.name]
                err(f"unguarded recursion: {' -> '.join(cycle)}", ref, "guarded")
            elif ref.name not in state:
                visit(ref.name, path + [ref.name])
        state[name] = 2

    for name in unguarded:
        if name not in state:
            visit(name, [name])

    # environment factors
    for env in model.env_factors:
        owner = f"environment factor {env.name}"
        env_active.setdefault(env.action, []).append(env)
        check_expr(env.rate, (), owner, "rate")
        check_targets(env.targets, (), owner, env)

    for name, acts in passive.items():
        if name not in active and name not in env_active:
            warn(f"unmatched passive action {name!r}: no influence action triggers it", acts[0], "unmatched")
    for name, acts in active.items():
        if name not in passive:
            warn(f"unmatched influence action {name!r}: no agent is passive to it", acts[0], "unmatched")
    for name, es in env_active.items():
        if name not in passive:
            warn(f"unmatched influence action {name!r}: no agent is passive to it", es[0], "unmatched")

    # initial configuration
    if not model.init:
        err("model has no init declaration", code="init")
    for entry in model.init:
        if entry.loc is None:
            if entry.name not in envs:
                what = "agent needs a location" if entry.name in agents else "undefined environment factor"
                err(f"init entry {entry.name!r}: {what}", entry, "init")
            continue
        if entry.name not in agents:
            what = "environment factors have no location" if entry.name in envs else "undefined agent"
            err(f"init entry {entry.name!r}: {what}", entry, "init")
            continue
        if space is not None:
            if len(entry.loc) != arity:
                err(f"init location {format_location(entry.loc)} has {len(entry.loc)} coordinate(s), "
                    f"space needs {arity}", entry, "arity")
            elif entry.loc not in space:
                err(f"init entry {entry.name}{format_location(entry.loc)}: location outside space", entry, "location")
    return diags

"""Pretty-printer producing canonical ``.mela`` source.

``parse_model(format_model(m)) == m`` holds for every well-formed AST.
"""

from __future__ import annotations

from . import ast as A

_RATE_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_COORD_PREC = {"+": 1, "-": 1, "*": 2, "mod": 2}


def format_number(v: float) -> str:
    return repr(float(v))


def format_rate(e, prec: int = 0) -> str:
    if isinstance(e, A.Num):
        s = format_number(e.value)
        return f"({s})" if e.value < 0 and prec > 0 else s
    if isinstance(e, A.Param):
        return e.name
    if isinstance(e, A.Count):
        return f"#{e.agent}({format_coords(e.loc)})"
    if isinstance(e, A.Neg):
        if isinstance(e.operand, A.Num):
            return f"-({format_rate(e.operand)})"
        return "-" + format_rate(e.operand, 3)
    if isinstance(e, A.Call):
        return f"{e.func}({', '.join(format_rate(a) for a in e.args)})"
    if isinstance(e, A.BinOp):
        p = _RATE_PREC[e.op]
        # left-associative: a right operand of equal precedence needs parentheses
        s = f"{format_rate(e.left, p)} {e.op} {format_rate(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    raise TypeError(f"not a rate expression: {e!r}")


def format_coord(e, prec: int = 0) -> str:
    if isinstance(e, A.CInt):
        return f"({e.value})" if e.value < 0 and prec > 0 else str(e.value)
    if isinstance(e, A.CVar):
        return e.name
    if isinstance(e, A.CBin):
        p = _COORD_PREC[e.op]
        s = f"{format_coord(e.left, p)} {e.op} {format_coord(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    raise TypeError(f"not a coordinate expression: {e!r}")


def format_coords(loc) -> str:
    return ", ".join(format_coord(c) for c in loc)


def format_loc_item(loc) -> str:
    if len(loc) == 1:
        return format_coord(loc[0])
    return f"({format_coords(loc)})"


def format_location(loc) -> str:
    """Concrete location: ``3`` or ``(0,1)``."""
    if loc is None:
        return "-"
    if len(loc) == 1:
        return str(loc[0])
    return "(" + ",".join(str(c) for c in loc) + ")"


def format_targets(t, vars=()) -> str:
    if isinstance(t, A.AllLocations):
        return "{all}"
    if isinstance(t, A.Here):
        return "{" + format_loc_item(tuple(A.CVar(v) for v in vars)) + "}"
    return "{" + ", ".join(format_loc_item(loc) for loc in t.locations) + "}"


def format_dest(d) -> str:
    if isinstance(d, A.AtLocation):
        return format_coords(d.loc)
    if isinstance(d, A.NewLocation):
        return f"new({format_coords(d.args)})"
    if isinstance(d, A.NewOuterLocation):
        return f"new_v({format_coords(d.args)})"
    if isinstance(d, A.UniformOver):
        return f"U({', '.join(format_loc_item(l) for l in d.locations)})"
    if isinstance(d, A.Empirical):
        return "{" + ", ".join(f"{format_loc_item(l)}[{format_rate(p)}]" for l, p in d.entries) + "}"
    raise TypeError(f"not a destination: {d!r}")


def format_term(t, vars=()) -> str:
    if isinstance(t, A.Nil):
        return "nil"
    if isinstance(t, A.ConstantRef):
        return f"{t.name}({format_coords(t.loc)})"
    if isinstance(t, A.Choice):
        return " + ".join(format_term(s, vars) for s in A.choice_terms(t))
    a = t.action
    pair = f"({a.name}, {format_rate(a.value)})"
    if a.kind == A.INFLUENCE:
        head = f"->{format_targets(a.targets, vars)}{pair}"
    elif a.kind == A.PASSIVE:
        head = f"<-{pair}"
    else:
        head = pair
    mode = {A.KEEP: " . ", A.CREATE: " up ", A.DESTROY: " down "}[a.mode]
    c = t.continuation
    return f"{head}{mode}{c.agent}({format_dest(c.dest)})"


def format_space(s) -> str:
    def opts(d):
        return f" boundary={d.boundary} neighbourhood={d.neighbourhood}"

    if isinstance(s, A.Line):
        return f"line({s.n})" + opts(s)
    if isinstance(s, A.Grid2D):
        return f"grid2d({s.w}, {s.h})" + opts(s)
    if isinstance(s, A.Grid3D):
        return f"grid3d({s.w}, {s.h}, {s.d})" + opts(s)
    if isinstance(s, A.Graph):
        rows = " ".join(f"{v}: [{', '.join(str(u) for u in nb)}];" for v, nb in s.adjacency)
        return "graph { " + rows + " }"
    if isinstance(s, A.Nested):
        inner = format_space(s.inner).split(" boundary=")[0]
        entry = f" entry={format_location(s.entry)}" if s.entry is not None else ""
        return f"nested({inner}, {format_space(s.outer)}){entry}" + opts(s.inner)
    raise TypeError(f"not a space: {s!r}")


def format_model(m: A.ModelDef) -> str:
    out = []
    for name, value in m.params.items():
        out.append(f"param {name} = {format_number(value)};")
    if m.params:
        out.append("")
    if m.space is not None:
        out.append(f"space {format_space(m.space)};")
        out.append("")
    for agent in m.agents.values():
        head = f"agent {agent.name}({', '.join(agent.params)}) ="
        terms = A.choice_terms(agent.body)
        if len(terms) == 1:
            out.append(f"{head} {format_term(terms[0], agent.params)};")
        else:
            out.append(head)
            for i, t in enumerate(terms):
                lead = "    " if i == 0 else "  + "
                tail = ";" if i == len(terms) - 1 else ""
                out.append(f"{lead}{format_term(t, agent.params)}{tail}")
    for e in m.env_factors:
        out.append(f"env {e.name} = ->{format_targets(e.targets)}({e.action}, {format_rate(e.rate)}) . {e.name};")
    if m.init:
        out.append("")
        entries = []
        for entry in m.init:
            loc = format_location(entry.loc) if entry.loc is not None else ""
            if entry.loc is not None and len(entry.loc) == 1:
                loc = f"({loc})"
            entries.append(f"{entry.name}{loc}[{entry.count}]")
        out.append("init = " + " | ".join(entries) + ";")
    return "\n".join(out) + "\n"

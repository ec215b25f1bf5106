"""Location sets, neighbourhoods and movement destinations."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

from . import ast as A
from .expr import eval_loc, eval_probability, RateError


class SpaceError(ValueError):
    pass


class DestinationError(RateError):
    pass


@dataclass(frozen=True)
class NeighbourhoodSpec:
    kind: str = A.VON_NEUMANN  # vonneumann | moore | graph
    boundary: str = A.PERIODIC


def _offsets(ndim: int, kind: str) -> list:
    if kind == A.VON_NEUMANN:
        out = []
        for axis in range(ndim):
            for step in (1, -1):
                off = [0] * ndim
                off[axis] = step
                out.append(tuple(off))
        return out
    return [o for o in itertools.product((-1, 0, 1), repeat=ndim) if any(o)]


class Space:
    """The enumerated location set of a space declaration.

    Locations are integer tuples kept in lexicographic order; ``index`` gives
    each location's position in that order.
    """

    def __init__(self, decl: A.SpaceDecl):
        self.decl = decl
        _check_decl(decl)
        if isinstance(decl, A.Nested):
            inner = _lattice(decl.inner)
            self._bounds = _bounds(decl.inner)
            self._adj = {v: tuple(nb) for v, nb in decl.outer.adjacency}
            locs = [c + (v,) for c in inner for v in decl.outer.vertices]
            self.entry = decl.entry if decl.entry is not None else min(inner)
            if self.entry not in set(inner):
                raise SpaceError(f"entry cell {self.entry} is outside the inner grid")
        elif isinstance(decl, A.Graph):
            self._adj = {v: tuple(nb) for v, nb in decl.adjacency}
            locs = [(v,) for v in decl.vertices]
        else:
            self._bounds = _bounds(decl)
            locs = _lattice(decl)
        self.locations = tuple(sorted(locs))
        self.index = {loc: i for i, loc in enumerate(self.locations)}

    def __len__(self):
        return len(self.locations)

    def __contains__(self, loc):
        return loc in self.index

    def __iter__(self):
        return iter(self.locations)

    @property
    def arity(self) -> int:
        return len(self.locations[0])

    @cached_property
    def default_neighbourhood(self) -> NeighbourhoodSpec:
        d = self.decl
        if isinstance(d, A.Graph):
            return NeighbourhoodSpec(A.GRAPH_ADJACENCY, A.CLOSED)
        grid = d.inner if isinstance(d, A.Nested) else d
        return NeighbourhoodSpec(grid.neighbourhood, grid.boundary)

    def neighbours(self, loc, spec: NeighbourhoodSpec | None = None) -> frozenset:
        return neighbours(self, spec or self.default_neighbourhood, loc)

    def outer_neighbours(self, loc) -> frozenset:
        """Nested spaces: the entry cells of the vertices adjacent to ``loc``'s vertex."""
        if not isinstance(self.decl, A.Nested):
            raise SpaceError("outer movement requires a nested space")
        if loc not in self.index:
            raise SpaceError(f"location {loc} is not in the space")
        return frozenset(self.entry + (u,) for u in self._adj[loc[-1]])


def _bounds(decl) -> list:
    """(lowest coordinate, extent) per axis. Lines count from 1, grids from 0."""
    if isinstance(decl, A.Line):
        return [(1, decl.n)]
    if isinstance(decl, A.Grid2D):
        return [(0, decl.w), (0, decl.h)]
    return [(0, decl.w), (0, decl.h), (0, decl.d)]


def _lattice(decl) -> list:
    return list(itertools.product(*(range(lo, lo + n) for lo, n in _bounds(decl))))


def _check_decl(decl):
    if isinstance(decl, A.Nested):
        _check_decl(decl.inner)
        _check_decl(decl.outer)
        return
    if isinstance(decl, A.Graph):
        if not decl.adjacency:
            raise SpaceError("graph has no vertices")
        verts = set(decl.vertices)
        for v, nb in decl.adjacency:
            for u in nb:
                if u not in verts:
                    raise SpaceError(f"edge {v} -> {u} references undeclared vertex {u}")
        return
    for _, n in _bounds(decl):
        if n < 1:
            raise SpaceError("space dimensions must be at least 1")


def build_space(decl: A.SpaceDecl) -> Space:
    return Space(decl)


def neighbours(space: Space, spec: NeighbourhoodSpec, loc) -> frozenset:
    """Locations reachable from ``loc`` in one step of the given neighbourhood."""
    if loc not in space.index:
        raise SpaceError(f"location {loc} is not in the space")
    decl = space.decl
    if spec.kind == A.GRAPH_ADJACENCY:
        if isinstance(decl, A.Graph):
            return frozenset((u,) for u in space._adj[loc[0]])
        if isinstance(decl, A.Nested):
            return space.outer_neighbours(loc)
        raise SpaceError("graph adjacency needs a graph space")
    if isinstance(decl, A.Graph):
        raise SpaceError(f"{spec.kind} neighbourhood needs a line or grid space")
    if isinstance(decl, A.Nested):
        cell, tail = loc[:-1], loc[-1:]
    else:
        cell, tail = loc, ()
    bounds = space._bounds
    out = set()
    for off in _offsets(len(cell), spec.kind):
        coords = []
        for c, d, (lo, n) in zip(cell, off, bounds):
            c2 = c + d
            if spec.boundary == A.PERIODIC:
                c2 = (c2 - lo) % n + lo
            elif not lo <= c2 < lo + n:
                break
            coords.append(c2)
        else:
            cand = tuple(coords) + tail
            if cand != loc:
                out.add(cand)
    return frozenset(out)


def eval_destination(dest, loc, state, space: Space, params=None, binding=None) -> dict:
    """Probability distribution over destination locations for a move from ``loc``.

    ``binding`` maps the acting agent's location variables to coordinates; when
    omitted, the variables named in ``dest`` are bound positionally to ``loc``.
    """
    if binding is None:
        binding = _implicit_binding(dest, loc)
    if isinstance(dest, A.AtLocation):
        dist = {eval_loc(dest.loc, binding): 1.0}
    elif isinstance(dest, A.NewLocation):
        dist = _uniform(space.neighbours(eval_loc(dest.args, binding)))
    elif isinstance(dest, A.NewOuterLocation):
        dist = _uniform(space.outer_neighbours(eval_loc(dest.args, binding)))
    elif isinstance(dest, A.UniformOver):
        dist = _uniform({eval_loc(l, binding) for l in dest.locations})
    elif isinstance(dest, A.Empirical):
        dist = {}
        for l, p in dest.entries:
            target = eval_loc(l, binding)
            dist[target] = dist.get(target, 0.0) + eval_probability(p, state, params, binding)
        total = sum(dist.values())
        if abs(total - 1.0) > 1e-9:
            raise DestinationError(f"destination probabilities sum to {total}, not 1")
    else:
        raise TypeError(f"not a destination: {dest!r}")
    for target in dist:
        if target not in space.index:
            raise DestinationError(f"destination {target} is outside the space")
    return dist


def _uniform(locs) -> dict:
    locs = sorted(locs)
    return {l: 1.0 / len(locs) for l in locs}


def _implicit_binding(dest, loc) -> dict:
    args = ()
    if isinstance(dest, (A.NewLocation, A.NewOuterLocation)):
        args = dest.args
    elif isinstance(dest, A.AtLocation):
        args = dest.loc
    return {a.name: c for a, c in zip(args, loc) if isinstance(a, A.CVar)}

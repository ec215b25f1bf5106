"""Abstract syntax for MELA models.

All nodes are frozen dataclasses, so two trees compare equal exactly when they
are structurally identical. Source positions are carried for diagnostics but
excluded from comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

Location = tuple[int, ...]

KEEP = "."
CREATE = "up"
DESTROY = "down"
MODES = (KEEP, CREATE, DESTROY)

NO_INFLUENCE = "none"
INFLUENCE = "influence"
PASSIVE = "passive"


@dataclass(frozen=True)
class Pos:
    line: int
    col: int


def _pos():
    return field(default=None, compare=False, repr=False)


# --- coordinate expressions (integer arithmetic over location variables) ---


@dataclass(frozen=True)
class CInt:
    value: int


@dataclass(frozen=True)
class CVar:
    name: str


@dataclass(frozen=True)
class CBin:
    op: str  # one of + - * mod
    left: "CoordExpr"
    right: "CoordExpr"


CoordExpr = Union[CInt, CVar, CBin]
LocExpr = tuple  # tuple[CoordExpr, ...]


# --- rate expressions ---


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Param:
    name: str
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Count:
    """``#Agent(loc)``: the number of agents in a given state at a location."""

    agent: str
    loc: LocExpr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Neg:
    operand: "RateExpr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "RateExpr"
    right: "RateExpr"


@dataclass(frozen=True)
class Call:
    func: str  # min | max
    args: tuple


RateExpr = Union[Num, Param, Count, Neg, BinOp, Call]


# --- location sets and destinations ---


@dataclass(frozen=True)
class Here:
    """The acting agent's own location."""


@dataclass(frozen=True)
class AllLocations:
    pass


@dataclass(frozen=True)
class LocationList:
    locations: tuple  # tuple[LocExpr, ...]


LocationSetExpr = Union[Here, AllLocations, LocationList]


@dataclass(frozen=True)
class AtLocation:
    """Point destination; ``S(x,y)`` keeps the location, ``S(1,0)`` jumps."""

    loc: LocExpr


@dataclass(frozen=True)
class NewLocation:
    """``new(vars)``: uniform over the space's neighbourhood of the location."""

    args: tuple  # tuple[CoordExpr, ...]


@dataclass(frozen=True)
class NewOuterLocation:
    """``new_v(vars)``: nested spaces only, uniform over adjacent outer vertices."""

    args: tuple


@dataclass(frozen=True)
class UniformOver:
    locations: tuple  # tuple[LocExpr, ...]


@dataclass(frozen=True)
class Empirical:
    entries: tuple  # tuple[tuple[LocExpr, RateExpr], ...]


DestinationExpr = Union[AtLocation, NewLocation, NewOuterLocation, UniformOver, Empirical]


# --- process terms ---


@dataclass(frozen=True)
class ActionSpec:
    name: str
    kind: str  # NO_INFLUENCE | INFLUENCE | PASSIVE
    mode: str  # KEEP | CREATE | DESTROY
    value: RateExpr
    targets: Optional[LocationSetExpr] = None
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Continuation:
    agent: str
    dest: DestinationExpr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Prefix:
    action: ActionSpec
    continuation: Continuation


@dataclass(frozen=True)
class Choice:
    left: "ProcessTerm"
    right: "ProcessTerm"


@dataclass(frozen=True)
class ConstantRef:
    name: str
    loc: LocExpr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class Nil:
    pass


ProcessTerm = Union[Prefix, Choice, ConstantRef, Nil]


def choice_terms(term: ProcessTerm) -> list:
    """Flatten a right-nested choice into its summands."""
    out = []
    while isinstance(term, Choice):
        out.extend(choice_terms(term.left))
        term = term.right
    out.append(term)
    return out


def make_choice(terms) -> ProcessTerm:
    terms = list(terms)
    body = terms[-1]
    for t in reversed(terms[:-1]):
        body = Choice(t, body)
    return body


# --- spaces ---

PERIODIC = "periodic"
CLOSED = "closed"
VON_NEUMANN = "vonneumann"
MOORE = "moore"
GRAPH_ADJACENCY = "graph"


@dataclass(frozen=True)
class Line:
    n: int
    boundary: str = PERIODIC
    neighbourhood: str = VON_NEUMANN


@dataclass(frozen=True)
class Grid2D:
    w: int
    h: int
    boundary: str = PERIODIC
    neighbourhood: str = VON_NEUMANN


@dataclass(frozen=True)
class Grid3D:
    w: int
    h: int
    d: int
    boundary: str = PERIODIC
    neighbourhood: str = VON_NEUMANN


@dataclass(frozen=True)
class Graph:
    adjacency: tuple  # tuple[tuple[int, tuple[int, ...]], ...], in declaration order

    @property
    def vertices(self) -> tuple:
        return tuple(v for v, _ in self.adjacency)


@dataclass(frozen=True)
class Nested:
    inner: Union[Line, Grid2D]
    outer: Graph
    entry: Optional[Location] = None


SpaceDecl = Union[Line, Grid2D, Grid3D, Graph, Nested]


# --- top level ---


@dataclass(frozen=True)
class AgentDef:
    name: str
    params: tuple  # location variable names, 1..3 of them
    body: ProcessTerm
    pos: Optional[Pos] = _pos()

    @property
    def location_arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class EnvDef:
    name: str
    targets: LocationSetExpr
    action: str
    rate: RateExpr
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class InitEntry:
    name: str
    loc: Optional[Location]  # None for environment factors
    count: int = 1
    pos: Optional[Pos] = _pos()


@dataclass(frozen=True)
class ModelDef:
    params: dict
    space: Optional[SpaceDecl]
    agents: dict  # name -> AgentDef, in definition order
    env_factors: tuple = ()
    init: tuple = ()
    # derived data (built space, flattened agent bodies), filled lazily
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __getstate__(self):
        state = dict(self.__dict__)
        state["cache"] = {}
        return state

    @property
    def env_map(self) -> dict:
        return {e.name: e for e in self.env_factors}

    def with_params(self, **overrides) -> "ModelDef":
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise KeyError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        params = dict(self.params)
        params.update({k: float(v) for k, v in overrides.items()})
        return ModelDef(params, self.space, self.agents, self.env_factors, self.init)

    def with_init(self, init) -> "ModelDef":
        return ModelDef(self.params, self.space, self.agents, self.env_factors, tuple(init))

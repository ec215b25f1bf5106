import pytest
from hypothesis import given, strategies as st

import mela
from mela import ast as A
from mela.expr import RateError
from mela.parser import parse_expr
from mela.semantics import SystemState
from mela.space import DestinationError, NeighbourhoodSpec, SpaceError, build_space, eval_destination, neighbours

GRAPH = A.Graph(((1, (2, 4)), (2, (1, 3, 4)), (3, (2, 4)), (4, (1, 3))))


def x(*c):
    return tuple(A.CVar(v) for v in c)


def test_two_cell_line_locations():
    s = build_space(A.Line(2))
    assert s.locations == ((1,), (2,))
    assert [s.index[l] for l in s.locations] == [0, 1]


def test_two_by_one_grid_indices():
    s = build_space(A.Grid2D(2, 1))
    assert len(s) == 2
    assert sorted(s.index.values()) == [0, 1]


def test_graph_locations():
    assert build_space(GRAPH).locations == ((1,), (2,), (3,), (4,))


def test_nested_location_count():
    s = build_space(A.Nested(A.Grid2D(3, 3), GRAPH))
    assert len(s) == 9 * 4
    assert list(s.locations) == sorted(s.locations)


@pytest.mark.parametrize("decl, size", [
    (A.Line(7), 7), (A.Grid2D(3, 4), 12), (A.Grid3D(2, 3, 4), 24), (A.Nested(A.Line(3), GRAPH), 12),
])
def test_sizes(decl, size):
    assert len(build_space(decl)) == size


@pytest.mark.parametrize("decl", [A.Line(0), A.Grid2D(2, 0), A.Graph(((1, (9,)),)), A.Graph(())])
def test_invalid_spaces(decl):
    with pytest.raises(SpaceError):
        build_space(decl)


def test_periodic_two_by_two_von_neumann_collapses():
    s = build_space(A.Grid2D(2, 2))
    assert neighbours(s, NeighbourhoodSpec(), (0, 0)) == {(1, 0), (0, 1)}


def test_graph_adjacency():
    s = build_space(GRAPH)
    assert s.neighbours((2,)) == {(1,), (3,), (4,)}


def test_closed_corner():
    s = build_space(A.Grid2D(3, 3, A.CLOSED))
    assert s.neighbours((0, 0)) == {(1, 0), (0, 1)}


def test_moore_counts():
    s = build_space(A.Grid2D(3, 3, A.PERIODIC, A.MOORE))
    assert all(len(s.neighbours(l)) == 8 for l in s)
    c = build_space(A.Grid2D(3, 3, A.CLOSED, A.MOORE))
    assert len(c.neighbours((1, 1))) == 8 and len(c.neighbours((0, 0))) == 3


def test_line_periodic_wraps():
    s = build_space(A.Line(4))
    assert s.neighbours((1,)) == {(2,), (4,)}
    assert build_space(A.Line(4, A.CLOSED)).neighbours((1,)) == {(2,)}


def test_neighbours_outside_space():
    with pytest.raises(SpaceError):
        build_space(A.Line(2)).neighbours((5,))


def test_neighbourhood_kind_must_fit_space():
    with pytest.raises(SpaceError):
        neighbours(build_space(GRAPH), NeighbourhoodSpec(A.VON_NEUMANN), (1,))
    with pytest.raises(SpaceError):
        neighbours(build_space(A.Line(3)), NeighbourhoodSpec(A.GRAPH_ADJACENCY), (1,))


def test_si_new_location():
    s = build_space(A.Line(2))
    assert eval_destination(A.NewLocation(x("l")), (1,), None, s) == {(2,): 1.0}


def test_lv_new_location_uniform():
    s = build_space(GRAPH)
    assert eval_destination(A.NewLocation(x("v")), (2,), None, s) == {(1,): 1 / 3, (3,): 1 / 3, (4,): 1 / 3}


def test_nested_outer_move():
    s = build_space(A.Nested(A.Grid2D(3, 3), GRAPH, (0, 0)))
    d = eval_destination(A.NewOuterLocation(x("x", "y", "v")), (2, 1, 1), None, s)
    assert d == {(0, 0, 2): 0.5, (0, 0, 4): 0.5}


def test_nested_inner_move_matches_mod_formula():
    s = build_space(A.Nested(A.Grid2D(3, 3), GRAPH))
    got = eval_destination(A.NewLocation(x("x", "y", "v")), (0, 2, 3), None, s)
    X, Y, v = 0, 2, 3
    expected = {((X + 1) % 3, Y, v), (X, (Y + 1) % 3, v), ((X + 2) % 3, Y, v), (X, (Y + 2) % 3, v)}
    assert set(got) == expected and all(p == 0.25 for p in got.values())


def test_cholera_uniform_formula():
    s = build_space(A.Grid2D(2, 2))
    mod = lambda a, b: A.CBin("mod", a, b)
    plus1 = lambda v: A.CBin("+", A.CVar(v), A.CInt(1))
    dest = A.UniformOver(((mod(plus1("x"), A.CInt(2)), A.CVar("y")), (A.CVar("x"), mod(plus1("y"), A.CInt(2)))))
    for loc in s:
        assert set(eval_destination(dest, loc, None, s, binding={"x": loc[0], "y": loc[1]})) == set(s.neighbours(loc))


def test_empirical_destination():
    s = build_space(A.Line(3))
    dest = A.Empirical((((A.CInt(2),), parse_expr("#S(1) / 4")), ((A.CInt(3),), parse_expr("1 - #S(1) / 4"))))
    d = eval_destination(dest, (1,), SystemState({("S", (1,)): 1}), s)
    assert d == {(2,): 0.25, (3,): 0.75}
    with pytest.raises(DestinationError, match="sum"):
        eval_destination(A.Empirical((((A.CInt(2),), A.Num(0.5)),)), (1,), None, s)


def test_destination_outside_space():
    with pytest.raises(DestinationError):
        eval_destination(A.AtLocation((A.CInt(9),)), (1,), None, build_space(A.Line(2)))
    assert isinstance(DestinationError("x"), RateError)


def test_point_mass():
    assert eval_destination(A.AtLocation(x("l")), (2,), None, build_space(A.Line(2))) == {(2,): 1.0}


grids = st.one_of(
    st.builds(A.Line, st.integers(1, 6), st.sampled_from([A.PERIODIC, A.CLOSED]), st.sampled_from([A.VON_NEUMANN, A.MOORE])),
    st.builds(A.Grid2D, st.integers(1, 5), st.integers(1, 5), st.sampled_from([A.PERIODIC, A.CLOSED]),
              st.sampled_from([A.VON_NEUMANN, A.MOORE])),
    st.builds(A.Grid3D, st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
              st.sampled_from([A.PERIODIC, A.CLOSED]), st.sampled_from([A.VON_NEUMANN, A.MOORE])),
)


@given(grids, st.data())
def test_neighbourhood_properties(decl, data):
    s = build_space(decl)
    loc = data.draw(st.sampled_from(s.locations))
    nb = s.neighbours(loc)
    assert nb <= set(s.locations) and loc not in nb
    for other in nb:
        assert loc in s.neighbours(other)  # symmetric on lines and grids
    if decl.boundary == A.PERIODIC:
        assert len({len(s.neighbours(l)) for l in s}) == 1
    dist = eval_destination(A.NewLocation(tuple(A.CVar(f"v{i}") for i in range(len(loc)))), loc, None, s)
    if nb:
        assert abs(sum(dist.values()) - 1.0) <= 1e-12
    else:
        assert dist == {}

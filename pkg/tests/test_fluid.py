import math
import random

import numpy as np
import pytest
import scipy.io

import mela
from mela.fluid import (
    FluidSystem,
    IntegrationError,
    channel_table,
    derive_channels,
    integrate,
    ode_rhs,
    species_of,
    stoichiometry,
    write_solution_csv,
)
from mela.parser import parse_model
from mela.semantics import SystemState, enabled_transitions, initial_state

from helpers import load_data

SI1 = load_data("si_single")


def keyed(channels, x):
    out = {}
    for c in channels:
        r = c.rate(x)
        if r:
            key = (c.label.action, c.label.location, c.delta_keys)
            out[key] = out.get(key, 0.0) + r
    return out


def test_single_location_si_channels():
    chans = derive_channels(SI1)
    assert [c.label.action for c in chans] == ["birth", "deathS", "deathI", "contact"]
    p = SI1.params
    x = [7, 3]  # S, I
    rates = [c.rate(x) for c in chans]
    assert rates == [7 * p["b"], 7 * p["dS"], 3 * p["dI"], 21 * (p["c"] * p["p"])]


def test_two_location_si_channels_match_initial_transitions():
    m = mela.load_corpus("si")
    chans = derive_channels(m)
    assert len(chans) == 12  # 6 schemas per location
    x = FluidSystem(m).initial_vector()
    active = keyed(chans, x)
    assert len(active) == 9
    ts = {(t.label.action, t.label.location, t.delta): t.rate for t in enabled_transitions(m, initial_state(m))}
    assert active == ts


def test_movement_channel():
    m = mela.load_corpus("si")
    (move,) = [c for c in derive_channels(m) if c.label.action == "moveS" and c.label.location == (1,)]
    assert move.delta_keys == ((("S", (1,)), -1), (("S", (2,)), 1))
    assert move.rate([5, 0, 0, 0]) == 5 * m.params["mS"]


def test_rhs_by_hand():
    p = SI1.params
    d = ode_rhs(derive_channels(SI1), [100.0, 1.0])
    assert d[0] == pytest.approx(100 * p["b"] - 100 * p["dS"] - 100 * p["c"] * p["p"], rel=1e-14)
    assert d[1] == pytest.approx(100 * p["c"] * p["p"] - p["dI"], rel=1e-14)
    assert np.allclose(FluidSystem(SI1).rhs(np.array([100.0, 1.0])), d, rtol=1e-14)


def test_zero_state_has_zero_derivative():
    for name in mela.CORPUS:
        m = mela.load_corpus(name)
        assert not ode_rhs(derive_channels(m), np.zeros(len(species_of(m)))).any()


def test_pure_movement_derivative_sums_to_zero():
    m = load_data("walk")
    chans = derive_channels(m)
    M = stoichiometry(m).matrix
    assert (M.sum(axis=0) == 0).all()
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(0, 100, len(species_of(m)))
        # exact sum of every signed contribution
        assert math.fsum(d * c.rate(x) for c in chans for _, d in c.delta) == 0.0
        assert abs(ode_rhs(chans, x).sum()) <= 1e-12 * x.sum()


def test_stoichiometry_columns_are_deltas():
    for name in mela.CORPUS:
        m = mela.load_corpus(name)
        st = stoichiometry(m)
        assert st.matrix.shape == (len(species_of(m)), len(derive_channels(m)))
        for j, c in enumerate(derive_channels(m)):
            col = np.zeros(len(st.species), dtype=np.int64)
            for i, d in c.delta:
                col[i] = d
            assert (st.matrix[:, j] == col).all()
            if c.label.influence is None and c.label.mode == ".":
                assert st.matrix[:, j].sum() == 0


def random_states(model, n, rng):
    species = species_of(model)
    env = initial_state(model).env
    for _ in range(n):
        k = rng.randint(1, min(len(species), 6))
        yield SystemState({key: rng.randint(0, 30) for key in rng.sample(species, k)}, env)


@pytest.mark.parametrize("name", mela.CORPUS)
def test_channels_agree_with_semantics(name):
    m = mela.load_corpus(name)
    chans = derive_channels(m)
    species = species_of(m)
    M = stoichiometry(m).matrix
    rng = random.Random(3)
    for state in random_states(m, 100, rng):
        x = [state.count(*k) for k in species]
        ts = enabled_transitions(m, state)
        expected = {}
        for t in ts:
            key = (t.label.action, t.label.location, t.delta)
            expected[key] = expected.get(key, 0.0) + t.rate
        assert keyed(chans, x) == expected
        by_key = {(c.label.action, c.label.location, c.delta_keys): j for j, c in enumerate(chans)}
        for t in ts:
            after = state.apply(t.delta)
            col = M[:, by_key[(t.label.action, t.label.location, t.delta)]]
            assert [after.count(*k) for k in species] == list(np.array(x) + col)


def test_expression_rates_match_semantics():
    text = """param k = 0.5;
    space line(2);
    agent S(l) = (grow, k * #S(l) / (1 + #S(l))) up S(l)
      + (move, max(0.1, #I(l))) . S({1[#S(1) / (#S(1) + #S(2))], 2[#S(2) / (#S(1) + #S(2))]});
    agent I(l) = ->{all}(hit, min(1, #S(l))) . I(l);
    init = S(1)[3] | S(2)[2] | I(1)[1];"""
    m = parse_model(text.replace("agent I(l) = ", "agent I(l) = (stay, 0) . I(l) + ")
                    .replace("(move,", "<-(hit, 0.25) . I(l) + (move,"))
    assert not mela.has_errors(mela.validate(m))
    chans = derive_channels(m)
    species = species_of(m)
    rng = random.Random(1)
    for state in random_states(m, 100, rng):
        if state.count("S", (1,)) + state.count("S", (2,)) == 0:
            continue
        x = [state.count(*k) for k in species]
        exp = {}
        for t in enabled_transitions(m, state):
            key = (t.label.action, t.label.location, t.delta)
            exp[key] = exp.get(key, 0.0) + t.rate
        assert keyed(chans, x) == exp
    assert "no" in channel_table(m)


def test_die_model_analytic():
    m = load_data("die")
    lam = m.params["lambda"]
    sol = integrate(m, 10.0, 1e-3, grid=np.linspace(0, 10, 101))
    assert np.max(np.abs(sol.values[:, 0] - np.exp(-lam * sol.times))) <= 1e-8


def test_rk4_order_on_si():
    sols = [integrate(SI1, 10.0, dt, grid=[0.0, 10.0]).values[-1] for dt in (0.2, 0.1, 0.05)]
    e1 = np.max(np.abs(sols[0] - sols[1]))
    e2 = np.max(np.abs(sols[1] - sols[2]))
    assert math.log2(e1 / e2) >= 3.5


def test_adaptive_agrees_with_rk4():
    grid = np.linspace(0, 10, 11)
    a = integrate(SI1, 10.0, 1e-2, grid=grid).values
    b = integrate(SI1, 10.0, 1e-2, method="adaptive", grid=grid).values
    assert np.allclose(a, b, rtol=1e-6, atol=1e-6)


def crossing(sysm, x0, t0, x_start, h):
    """Time and state where the prey count increases through its initial value."""
    from mela.fluid import _rk4_step

    target = x_start[1]
    t, x = t0, x0
    while True:
        nxt = _rk4_step(sysm.rhs, x, h)
        if x[1] < target <= nxt[1] and t > 1.0:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = (lo + hi) / 2
                y = _rk4_step(sysm.rhs, x, mid)
                lo, hi = (mid, hi) if y[1] < target else (lo, mid)
            return t + lo, _rk4_step(sysm.rhs, x, lo)
        t, x = t + h, nxt


def test_lotka_volterra_is_periodic():
    m = load_data("lv_single")
    sysm = FluidSystem(m)
    x0 = sysm.initial_vector()
    assert species_of(m) == [("Pd", (1,)), ("Pr", (1,))]
    period, x = crossing(sysm, x0, 0.0, x0, 1e-3)
    assert 5 < period < 30
    assert np.max(np.abs(x - x0)) < 1e-3
    # the sampled solution's time derivative agrees with M v along the orbit
    grid = np.linspace(0, period, 2001)
    sol = integrate(m, period, 1e-3, grid=grid)
    h = grid[1] - grid[0]
    fd = (sol.values[2:] - sol.values[:-2]) / (2 * h)
    rhs = np.array([sysm.rhs(v) for v in sol.values[1:-1]])
    assert np.max(np.abs(fd - rhs)) <= 1e-3 * np.max(np.abs(rhs))


@pytest.mark.parametrize("name", ["si", "lv", "cholera"])
def test_jacobian_matches_finite_differences(name):
    m = mela.load_corpus(name)
    sysm = FluidSystem(m)
    rng = np.random.default_rng(2)
    n = len(sysm.species)
    for _ in range(20):
        x = rng.uniform(1, 50, n)
        u = rng.normal(size=n)
        h = 1e-4
        fd = (sysm.rhs(x + h * u) - sysm.rhs(x - h * u)) / (2 * h)
        jd = sysm.jacobian(x) @ u
        assert np.allclose(fd, jd, rtol=1e-6, atol=1e-6 * np.max(np.abs(jd)))


def test_negative_values_clipped_with_warning(caplog):
    m = parse_model("space line(1); agent B(l) = ->{l}(hit, 1) . B(l) + <-(hit, 1) down B(l); init = B(1)[100];")
    with caplog.at_level("WARNING"):
        sol = integrate(m, 2.0, 0.1)
    assert sol.clipped > 0 and (sol.values >= 0).all()
    assert "clipped" in caplog.text


def test_blow_up_is_reported():
    m = parse_model("space line(1); agent A(l) = ->{l}(hit, 1) up A(l) + <-(hit, 1) . A(l); init = A(1)[10];")
    with pytest.raises(IntegrationError, match="non-finite"):
        integrate(m, 10.0, 0.01)


def test_bad_arguments():
    with pytest.raises(ValueError):
        integrate(SI1, 0, 0.1)
    with pytest.raises(ValueError):
        integrate(SI1, 1, 0.1, method="euler")


def test_outputs(tmp_path):
    sol = integrate(SI1, 1.0, 0.01, grid=np.linspace(0, 1, 3))
    write_solution_csv(sol, tmp_path / "ode.csv")
    lines = (tmp_path / "ode.csv").read_text().splitlines()
    assert lines[0] == "time,series,value"
    assert len(lines) == 1 + 3 * 2 and lines[1] == "0.0,S@1,1000.0"
    st = stoichiometry(mela.load_corpus("lv"))
    st.to_matrix_market(tmp_path / "m.mtx")
    M = scipy.io.mmread(str(tmp_path / "m.mtx")).toarray()
    assert M.shape[1] == len(derive_channels(mela.load_corpus("lv")))
    assert (M == st.matrix).all()
    table = channel_table(SI1).splitlines()
    assert len(table) == 5 and table[0].startswith("id\taction")

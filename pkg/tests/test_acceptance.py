"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines as
they are produced; they are also collected in the terminal summary.
"""

import math
import random
import time
from collections import deque

import numpy as np
from scipy import stats

import mela
from mela import ast as A
from mela.fluid import integrate, species_of, stoichiometry
from mela.semantics import SystemState, enabled_transitions, initial_state
from mela.stochastic import enumerate_state_space, simulate_ensemble, ssa_run, write_trajectory_csv

from helpers import aggregate_rates, brute_reachable, load_data, oracle_rates, report

EXPECTED_INIT = {
    "si": SystemState({("S", (1,)): 2, ("S", (2,)): 1, ("I", (1,)): 1}),
    "lv": SystemState({("Pd", (1,)): 10, ("Pd", (2,)): 5, ("Pr", (3,)): 10, ("Pr", (4,)): 15}),
    "cholera": SystemState({("S", (0, 0)): 100, ("I", (0, 0)): 1}, {"E": 1}),
    "nested": SystemState({**{("S", (0, 0, v)): 5 for v in range(1, 5)}, ("I", (1, 1, 1)): 1}),
}


def test_criterion_1_corpus_fidelity():
    t0 = time.perf_counter()
    problems = []
    for name in mela.CORPUS:
        try:
            m = mela.load_corpus(name)
            if mela.validate(m):
                problems.append(f"{name}: diagnostics")
            if initial_state(m) != EXPECTED_INIT[name]:
                problems.append(f"{name}: initial state {initial_state(m)}")
            ssa_run(m, 10.0, seed=0)
        except Exception as e:  # report, then fail below
            problems.append(f"{name}: {e}")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 5.0
    report(1, "corpus fidelity", ok, f"4 models, {elapsed:.2f} s (< 5 s)" + (f"; {problems}" if problems else ""))


def small_reachable(model, start, limit, max_agents=6):
    """States with at most ``max_agents`` agents reachable from ``start`` without exceeding it."""
    seen, queue = {start}, deque([start])
    while queue and len(seen) < limit:
        s = queue.popleft()
        for t in enabled_transitions(model, s):
            nxt = s.apply(t.delta)
            if nxt.total() <= max_agents and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return list(seen)[:limit]


def test_criterion_2_oracle_equivalence():
    t0 = time.perf_counter()
    rng = random.Random(2)
    checked, worst, mismatched = 0, 0.0, []
    for name in mela.CORPUS:
        m = mela.load_corpus(name)
        start = initial_state(m)
        if start.total() <= 6:
            states = small_reachable(m, start, 400)
        else:
            # seeds with few agents; everything reachable from them within the bound
            species = species_of(m)
            states = set()
            for _ in range(6):
                seed = SystemState({rng.choice(species): 1 for _ in range(3)}, start.env)
                states.update(small_reachable(m, seed, 30))
        for s in states:
            agg = aggregate_rates(enabled_transitions(m, s))
            ora = oracle_rates(m, s)
            checked += 1
            if agg.keys() != ora.keys():
                mismatched.append((name, s))
                continue
            for k in agg:
                worst = max(worst, abs(agg[k] - ora[k]) / abs(ora[k]))
    si = mela.load_corpus("si")
    c, p = si.params["c"], si.params["p"]
    contact = [t for t in enabled_transitions(si, initial_state(si))
               if t.label.action == "contact" and t.label.location == (1,)]
    contact_ok = len(contact) == 1 and math.isclose(contact[0].rate, 2 * c * p, rel_tol=1e-12)
    elapsed = time.perf_counter() - t0
    ok = checked >= 50 and not mismatched and worst <= 1e-12 and contact_ok and elapsed < 30
    report(2, "oracle equivalence", ok,
           f"{checked} states, max rel err {worst:.1e}, key mismatches {len(mismatched)}, "
           f"contact@1 = 2cp {'ok' if contact_ok else 'wrong'}, {elapsed:.1f} s (< 30 s)")


def test_criterion_3_exponential_waiting_time():
    m = load_data("die")
    lam = m.params["lambda"]
    n = 10_000
    times, events = np.empty(n), set()
    for s in range(n):
        tr = ssa_run(m, 1e9, seed=s)
        times[s] = tr.times[0]
        events.add(tr.n_events)
    se = times.std(ddof=1) / math.sqrt(n)
    z = abs(times.mean() - 1 / lam) / se
    pval = stats.kstest(times, "expon", args=(0, 1 / lam)).pvalue
    ok = events == {1} and z <= 3 and pval > 0.01
    report(3, "exponential waiting time", ok,
           f"mean {times.mean():.4f} vs 1/lambda {1 / lam:.4f} ({z:.2f} SE), KS p = {pval:.3f} (> 0.01)")


def scaled(model, k):
    init = [A.InitEntry(e.name, e.loc, e.count * k) for e in model.init]
    return model.with_params(c=model.params["c"] / k).with_init(init)


def fluid_deviation(model, replicas, grid):
    ens = simulate_ensemble(model, grid[-1], replicas, 2024, grid)
    ode = integrate(model, grid[-1], 1e-3, grid=grid).values
    return np.max(np.abs(ens.mean - ode))


def test_criterion_4_fluid_consistency():
    t0 = time.perf_counter()
    m = load_data("si_single")
    grid = np.linspace(0, 10, 21)
    s0 = initial_state(m).count("S", (1,))
    base = fluid_deviation(m, 200, grid)
    big = fluid_deviation(scaled(m, 10), 200, grid)
    rel_base, rel_big = base / s0, big / (10 * s0)
    elapsed = time.perf_counter() - t0
    ok = base <= 0.05 * s0 and rel_big < rel_base and elapsed < 60
    report(4, "fluid consistency", ok,
           f"max |mean - ODE| = {base:.1f} (<= {0.05 * s0:g}); relative {rel_base:.4f} -> {rel_big:.4f} "
           f"at x10; {elapsed:.1f} s (< 60 s)")


def test_criterion_5_conservation():
    worst_step, col_sums = 0, []
    for name in ("walk",):
        m = load_data(name)
        total = initial_state(m).total()
        for seed in range(20):
            counts = ssa_run(m, 10.0, seed).count_matrix()
            worst_step = max(worst_step, int(np.max(np.abs(counts.sum(axis=1) - total))))
        M = stoichiometry(m).matrix
        col_sums.append(int(np.max(np.abs(M.sum(axis=0)))))
    ok = worst_step == 0 and max(col_sums) == 0
    report(5, "conservation", ok,
           f"max change of total over every SSA step {worst_step}; max |column sum| {max(col_sums)}")


def test_criterion_6_generator_validity():
    worst, counts = 0.0, []
    cases = [
        mela.load_corpus("si").with_params(b=0.0),
        load_data("walk").with_init([A.InitEntry("W", (0, 0), 2), A.InitEntry("W", (2, 1), 1)]),
        load_data("die"),
    ]
    for m in cases:
        start = initial_state(m)
        c = enumerate_state_space(m, caps=start.total())
        worst = max(worst, float(np.max(np.abs(c.row_sums()))))
        counts.append((c.n_states, len(brute_reachable(m, start))))
    lv = mela.load_corpus("lv").with_init([A.InitEntry("Pd", (1,), 1), A.InitEntry("Pr", (1,), 1)])
    worst = max(worst, float(np.max(np.abs(enumerate_state_space(lv, caps=2).row_sums()))))
    ok = worst <= 1e-12 and all(a == b for a, b in counts)
    report(6, "generator validity", ok,
           f"max |row sum| {worst:.1e}; states vs brute force {counts}")


def test_criterion_7_determinism(tmp_path):
    same = []
    for name in mela.CORPUS:
        m = mela.load_corpus(name)
        files = []
        for run in range(2):
            path = tmp_path / f"{name}{run}.csv"
            write_trajectory_csv(ssa_run(m, 10.0, seed=42), path)
            files.append(path.read_bytes())
        same.append(files[0] == files[1])
    report(7, "determinism", all(same), f"{sum(same)}/4 corpus models give identical trajectory files")


def test_criterion_8_integrator_order():
    m = load_data("si_single")
    ends = [integrate(m, 10.0, dt, grid=[0.0, 10.0]).values[-1] for dt in (0.2, 0.1, 0.05)]
    order = math.log2(np.max(np.abs(ends[0] - ends[1])) / np.max(np.abs(ends[1] - ends[2])))
    die = load_data("die")
    sol = integrate(die, 10.0, 1e-3, grid=np.linspace(0, 10, 101))
    err = float(np.max(np.abs(sol.values[:, 0] - np.exp(-die.params["lambda"] * sol.times))))
    ok = order >= 3.5 and err <= 1e-8
    report(8, "integrator order", ok, f"observed order {order:.2f} (>= 3.5); die error {err:.1e} (<= 1e-8)")

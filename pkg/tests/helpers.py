"""Shared test utilities and independent oracles."""

from collections import Counter
from pathlib import Path

import mela
from mela.semantics import ATOMIC, EFFECTIVE, individual_lts

DATA = Path(__file__).parent / "data"

SI_TEXT = mela.corpus_path("si").read_text(encoding="utf-8")

# one "PASS"/"FAIL" line per acceptance criterion, printed at the end of the run
CRITERIA = []


def report(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
    CRITERIA.append(line)
    print(line)
    assert ok, line


def load_data(name):
    return mela.parse_file(DATA / f"{name}.mela")


def replace_params(model, **kw):
    return model.with_params(**kw)


def oracle_rates(model, state, max_agents=6):
    """Sum individual-level rates of state-changing steps by (action, location, delta)."""
    out = Counter()
    for t in individual_lts(model, state, max_agents):
        if t.kind in (ATOMIC, EFFECTIVE) and t.delta:
            out[(t.label.action, t.label.location, t.delta)] += t.label.value
    return out


def aggregate_rates(transitions):
    out = Counter()
    for t in transitions:
        out[(t.label.action, t.label.location, t.delta)] += t.rate
    return out


def brute_reachable(model, start, max_agents=6):
    """Reachable states found by exploring the individual-level transition system."""
    seen = {start}
    stack = [start]
    while stack:
        s = stack.pop()
        for t in individual_lts(model, s, max_agents):
            if t.kind in (ATOMIC, EFFECTIVE) and t.delta and t.label.value > 0 and t.target not in seen:
                seen.add(t.target)
                stack.append(t.target)
    return seen

"""Exact stochastic simulation and explicit state-space construction.

Simulation uses Gillespie's direct method over the reaction channels of
:mod:`mela.fluid`. Random numbers come from numpy's PCG64 generator; replica
``r`` of a run with seed ``s`` draws from ``SeedSequence(s, spawn_key=(r,))``,
so every replica has its own reproducible stream.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import ast as A
from .fluid import PropensityKernel, derive_channels, species_label, species_of, stoichiometry
from .printer import format_location
from .semantics import SystemState, TransitionLabel, enabled_transitions, initial_state

# Above this many channels the propensities are evaluated with numpy.
VECTOR_THRESHOLD = 48
_BLOCK = 512


def make_rng(seed: int, replica: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(replica),))))


@dataclass
class Trajectory:
    """One SSA run: the initial state plus the time and channel of each event."""

    species: list
    channels: list  # ReactionChannel objects, indexed by ``fired``
    x0: np.ndarray
    times: np.ndarray  # event times, strictly increasing, all in (0, t_end]
    fired: np.ndarray  # channel index of each event
    seed: int
    replica: int
    t_end: float
    absorbed: bool
    env: dict = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        return len(self.times)

    def count_matrix(self) -> np.ndarray:
        """Counts after each event, row 0 being the initial state."""
        M = stoichiometry(self.channels, self.species).matrix
        steps = M.T[self.fired] if len(self.fired) else np.zeros((0, len(self.species)), dtype=np.int64)
        out = np.empty((len(self.fired) + 1, len(self.species)), dtype=np.int64)
        out[0] = self.x0
        np.cumsum(steps, axis=0, out=out[1:])
        out[1:] += self.x0
        return out

    def final_counts(self) -> np.ndarray:
        return self.count_matrix()[-1]

    def state_of(self, row) -> SystemState:
        return SystemState({k: int(n) for k, n in zip(self.species, row) if n}, self.env)

    def __iter__(self):
        """Yield ``(time, state, label)``; the first entry is the initial state with label ``None``."""
        counts = self.count_matrix()
        yield 0.0, self.state_of(counts[0]), None
        for k, (t, j) in enumerate(zip(self.times, self.fired)):
            yield float(t), self.state_of(counts[k + 1]), self.channels[j].label

    def sample(self, grid: Sequence[float]) -> np.ndarray:
        """Counts at each grid time, taking the last state at or before it."""
        counts = self.count_matrix()
        rows = np.searchsorted(self.times, np.asarray(grid, dtype=float), side="right")
        return counts[rows]


class _Propensities:
    """Rate evaluation for integer count vectors, matching the aggregate semantics."""

    def __init__(self, channels):
        self.channels = channels
        self.vector = len(channels) > VECTOR_THRESHOLD
        if self.vector:
            self.kernel = PropensityKernel(channels)
        self.simple = []
        for c in channels:
            v = c.constant_value
            if v is None:
                self.simple.append(None)
            elif len(c.reactants) == 1:
                self.simple.append((0, c.reactants[0], 0, c.env_mult, v))
            elif c.self_pair:
                self.simple.append((1, c.reactants[0], 0, 1, v))
            else:
                self.simple.append((2, c.reactants[0], c.reactants[1], 1, v))

    def __call__(self, x) -> list:
        if self.vector:
            return self.kernel(np.asarray(x, dtype=float)).tolist()
        out = []
        for c, s in zip(self.channels, self.simple):
            if s is None:
                out.append(c.rate(x))
                continue
            kind, a, b, k, v = s
            if kind == 0:
                n = x[a] if k == 1 else k * x[a]
            elif kind == 1:
                n = x[a] * (x[a] - 1)
            else:
                n = x[a] * x[b]
            out.append(n * v if n else 0.0)
        return out


def ssa_run(model: A.ModelDef, t_end: float, seed: int, replica: int = 0, max_events: Optional[int] = None) -> Trajectory:
    """Simulate one trajectory up to ``t_end`` with the direct method.

    At each step the waiting time is exponential with the total rate and the
    channel is chosen with probability proportional to its rate. The run ends
    at ``t_end`` or when no channel is enabled (``absorbed``).
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    species = species_of(model)
    channels = derive_channels(model)
    init = initial_state(model)
    index = {k: i for i, k in enumerate(species)}
    x = [0] * len(species)
    for key, n in init.items():
        x[index[key]] = n
    x0 = np.array(x, dtype=np.int64)
    deltas = [c.delta for c in channels]
    props = _Propensities(channels)
    rng = make_rng(seed, replica)
    exps, unifs, k = rng.standard_exponential(_BLOCK), rng.random(_BLOCK), 0
    times, fired = [], []
    t = 0.0
    absorbed = False
    while True:
        rates = props(x)
        total = math.fsum(rates)
        if total <= 0.0:
            absorbed = True
            break
        if k == _BLOCK:
            exps, unifs, k = rng.standard_exponential(_BLOCK), rng.random(_BLOCK), 0
        t += exps[k] / total
        if t > t_end:
            break
        target = unifs[k] * total
        k += 1
        acc = 0.0
        j = -1
        for i, r in enumerate(rates):
            if r > 0.0:
                acc += r
                j = i
                if acc > target:
                    break
        for i, d in deltas[j]:
            x[i] += d
        times.append(t)
        fired.append(j)
        if max_events is not None and len(times) >= max_events:
            break
    return Trajectory(species, channels, x0, np.array(times, dtype=float), np.array(fired, dtype=np.intp),
                      int(seed), int(replica), float(t_end), absorbed, init.env)


# --- ensembles ---


@dataclass
class EnsembleResult:
    grid: np.ndarray
    species: list
    mean: np.ndarray  # len(grid) x len(species)
    variance: np.ndarray  # population variance (ddof=0) across replicas
    replicas: int
    base_seed: int

    def series_mean(self, name: str, loc) -> np.ndarray:
        return self.mean[:, self.species.index((name, loc))]

    def totals(self, name: str) -> np.ndarray:
        cols = [i for i, (n, _) in enumerate(self.species) if n == name]
        return self.mean[:, cols].sum(axis=1)


def _replica_samples(model, t_end, base_seed, replica, grid):
    return ssa_run(model, t_end, base_seed, replica).sample(grid)


def _replica_batch(model, t_end, base_seed, replicas, grid):
    return [_replica_samples(model, t_end, base_seed, r, grid) for r in replicas]


def worker_count(replicas: int) -> int:
    env = os.environ.get("MELA_THREADS")
    n = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n, replicas))


def simulate_ensemble(model: A.ModelDef, t_end: float, replicas: int, base_seed: int,
                      grid: Sequence[float], workers: Optional[int] = None) -> EnsembleResult:
    """Mean and variance of every species count over ``replicas`` independent runs.

    Replica ``r`` uses the stream ``(base_seed, r)``. Results do not depend on
    the number of worker processes (``MELA_THREADS`` caps it).
    """
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    grid = np.asarray(grid, dtype=float)
    workers = worker_count(replicas) if workers is None else max(1, min(workers, replicas))
    if workers == 1:
        samples = _replica_batch(model, t_end, base_seed, range(replicas), grid)
    else:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [list(range(w, replicas, workers)) for w in range(workers)]
        by_replica = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_replica_batch, model, t_end, base_seed, ch, grid) for ch in chunks]
            for ch, fut in zip(chunks, futures):
                by_replica.update(zip(ch, fut.result()))
        samples = [by_replica[r] for r in range(replicas)]
    stack = np.stack(samples).astype(float)
    return EnsembleResult(grid, species_of(model), stack.mean(axis=0), stack.var(axis=0), replicas, int(base_seed))


# --- output files ---


def write_trajectory_csv(traj: Trajectory, path, wide: bool = False, grid=None) -> None:
    """Trajectory as CSV. Long form has header ``time,agentState,location,count``.

    Without ``grid`` every event is written, each row listing the full state.
    """
    if grid is None:
        times = np.concatenate([[0.0], traj.times])
        counts = traj.count_matrix()
    else:
        times = np.asarray(grid, dtype=float)
        counts = traj.sample(times)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        if wide:
            w.writerow(["time"] + [species_label(s) for s in traj.species])
            for t, row in zip(times, counts):
                w.writerow([repr(float(t))] + [int(v) for v in row])
        else:
            w.writerow(["time", "agentState", "location", "count"])
            for t, row in zip(times, counts):
                for (name, loc), v in zip(traj.species, row):
                    w.writerow([repr(float(t)), name, format_location(loc), int(v)])


def write_ensemble_csv(res: EnsembleResult, path) -> None:
    labels = [species_label(s) for s in res.species]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["time", "series", "mean", "variance"])
        for i, t in enumerate(res.grid):
            for j, lab in enumerate(labels):
                w.writerow([repr(float(t)), lab, repr(float(res.mean[i, j])), repr(float(res.variance[i, j]))])


# --- explicit state space ---

TRUNCATE = "truncate"
ERROR = "error"


class StateSpaceError(RuntimeError):
    """Enumeration stopped: too many states, or a cap was hit under the error policy."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class CtmcExplicit:
    species: list
    states: list  # SystemState, in discovery order
    entries: list  # (from, to, rate)
    labels: list  # TransitionLabel per entry
    truncated: int = 0
    policy: str = TRUNCATE
    complete: bool = True

    def __eq__(self, other):
        if not isinstance(other, CtmcExplicit):
            return NotImplemented
        return (self.species == other.species and self.states == other.states
                and self.entries == other.entries and self.labels == other.labels
                and self.truncated == other.truncated)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def exit_rates(self) -> np.ndarray:
        out = np.zeros(len(self.states))
        for i, _, r in self.entries:
            out[i] += r
        return out

    def generator(self):
        """Sparse generator matrix Q with ``Q[i,i] = -(exit rate of i)``."""
        import scipy.sparse

        n = len(self.states)
        rows = [i for i, _, _ in self.entries] + list(range(n))
        cols = [j for _, j, _ in self.entries] + list(range(n))
        vals = [r for _, _, r in self.entries] + list(-self.exit_rates())
        return scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.generator().sum(axis=1)).ravel()


def _cap_lookup(caps, species):
    if caps is None:
        return [None] * len(species)
    if isinstance(caps, Mapping):
        default = caps.get("*")
        return [caps.get(s, default) for s in species]
    return [int(caps)] * len(species)


def enumerate_state_space(model: A.ModelDef, caps=None, max_states: int = 100_000,
                          policy: str = TRUNCATE) -> CtmcExplicit:
    """Breadth-first construction of the reachable CTMC from the initial state.

    ``caps`` bounds each ``(agent, location)`` count: an integer for all of
    them, or a mapping (key ``"*"`` gives the default). A transition that
    would exceed a cap is dropped and counted (``policy="truncate"``) or
    aborts the enumeration (``policy="error"``).
    """
    if policy not in (TRUNCATE, ERROR):
        raise ValueError(f"unknown cap policy {policy!r}")
    species = species_of(model)
    limits = dict(zip(species, _cap_lookup(caps, species)))
    start = initial_state(model)
    index = {start: 0}
    states = [start]
    entries, labels = [], []
    truncated = 0
    queue = deque([start])

    def partial():
        return CtmcExplicit(species, states, entries, labels, truncated, policy, complete=False)

    while queue:
        s = queue.popleft()
        i = index[s]
        for t in enabled_transitions(model, s):
            target = s.apply(t.delta)
            over = [k for k, _ in t.delta if limits.get(k) is not None and target.count(*k) > limits[k]]
            if over:
                if policy == ERROR:
                    raise StateSpaceError(f"transition {t.label.action} exceeds the cap on "
                                          f"{species_label(over[0])}", partial())
                truncated += 1
                continue
            j = index.get(target)
            if j is None:
                if len(states) >= max_states:
                    raise StateSpaceError(f"more than {max_states} states", partial())
                j = index[target] = len(states)
                states.append(target)
                queue.append(target)
            entries.append((i, j, t.rate))
            labels.append(t.label)
    return CtmcExplicit(species, states, entries, labels, truncated, policy)


def _fmt_influence(infl) -> str:
    if infl is None:
        return "-"
    return ";".join(format_location(l) for l in infl) or "{}"


def _parse_loc(text):
    if text == "-":
        return None
    return tuple(int(c) for c in text.strip("()").split(","))


def export_ctmc(ctmc: CtmcExplicit, directory, metadata: Optional[dict] = None) -> dict:
    """Write ``states.txt``, ``transitions.txt``, ``labels.txt`` and ``metadata.json``.

    ``states.txt``: header lines start with ``#``; then ``index count...`` per
    state, counts in species order. ``transitions.txt``: ``from to rate action``
    per entry. ``labels.txt`` holds the full label of each entry (same order).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    env = ctmc.states[0].env if ctmc.states else {}
    with open(d / "states.txt", "w", encoding="utf-8") as f:
        f.write(f"# states {len(ctmc.states)} species {len(ctmc.species)}\n")
        f.write("# species " + " ".join(species_label(s) for s in ctmc.species) + "\n")
        f.write("# env " + " ".join(f"{k}:{v}" for k, v in env.items()) + "\n")
        for i, s in enumerate(ctmc.states):
            f.write(" ".join([str(i)] + [str(s.count(*k)) for k in ctmc.species]) + "\n")
    with open(d / "transitions.txt", "w", encoding="utf-8") as f:
        f.write(f"# transitions {len(ctmc.entries)} states {len(ctmc.states)}\n")
        for (i, j, r), lab in zip(ctmc.entries, ctmc.labels):
            f.write(f"{i} {j} {r!r} {lab.action}\n")
    with open(d / "labels.txt", "w", encoding="utf-8") as f:
        f.write("# mode influence action value location\n")
        for lab in ctmc.labels:
            f.write(f"{lab.mode} {_fmt_influence(lab.influence)} {lab.action} {lab.value!r} "
                    f"{format_location(lab.location)}\n")
    meta = {
        "states": len(ctmc.states),
        "transitions": len(ctmc.entries),
        "truncated": ctmc.truncated,
        "policy": ctmc.policy,
        "complete": ctmc.complete,
        "species": [species_label(s) for s in ctmc.species],
    }
    meta.update(metadata or {})
    (d / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return meta


def read_ctmc(directory) -> CtmcExplicit:
    """Re-import files written by :func:`export_ctmc`."""
    from .fluid import parse_species_label

    d = Path(directory)
    meta = json.loads((d / "metadata.json").read_text(encoding="utf-8"))
    species, env, states = [], {}, []
    for line in (d / "states.txt").read_text(encoding="utf-8").splitlines():
        if line.startswith("# species"):
            species = [parse_species_label(s) for s in line.split()[2:]]
        elif line.startswith("# env"):
            env = {k: int(v) for k, v in (p.split(":") for p in line.split()[2:])}
        elif line and not line.startswith("#"):
            vals = [int(v) for v in line.split()[1:]]
            states.append(SystemState({k: n for k, n in zip(species, vals) if n}, env))
    entries = []
    for line in (d / "transitions.txt").read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            i, j, r, _ = line.split()
            entries.append((int(i), int(j), float(r)))
    labels = []
    for line in (d / "labels.txt").read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            mode, infl, action, value, loc = line.split()
            influence = None if infl == "-" else () if infl == "{}" else tuple(_parse_loc(p) for p in infl.split(";"))
            labels.append(TransitionLabel(mode, influence, action, float(value), _parse_loc(loc)))
    return CtmcExplicit(species, states, entries, labels, meta["truncated"], meta["policy"], meta["complete"])

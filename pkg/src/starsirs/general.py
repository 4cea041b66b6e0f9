"""Per-vertex engine driven by the graphical representation.

The process reads events from a :class:`~starsirs.rng.ClockBundle` and
applies the three update rules (recover, lose immunity, infect), skipping
events whose source state does not match.  On the star, each round uses a
fresh bundle addressed by the round number and aligned at the round's
start, so that two processes reading the same bundles are coupled exactly
as in the shared-clock construction.

This engine is the faithful reference; :mod:`starsirs.lumped` is the fast
path.  It is intended for n up to about 10**4.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import ProcessParams, Variant, VertexState
from .rng import (DEIMMUNIZATION, INFECTION, RECOVERY, ClockBundle, SeedSpec,
                  clock_identity, next_bundle_event)

S, I, R = 0, 1, 2

# walker outcomes
NEED_MORE, REINFECTED, EXTINCT, ARTIFICIAL = 0, 1, 2, 3
# walker phases of the root within a round
PH_INFECTED, PH_IMMUNE, PH_SUSCEPTIBLE, PH_DONE = 0, 1, 2, 3


class Graph:
    """Finite simple undirected graph with vertices ``0..n_vertices-1``.

    Undirected edge ``k = (u, v)`` yields directed edges ``2k: u -> v`` and
    ``2k+1: v -> u``.
    """

    def __init__(self, n_vertices: int, edges):
        edges = [tuple(int(x) for x in e) for e in edges]
        seen = set()
        for u, v in edges:
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            if not (0 <= u < n_vertices and 0 <= v < n_vertices):
                raise ValueError(f"edge ({u}, {v}) out of range")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
        self.n_vertices = int(n_vertices)
        self.edges = edges
        m = len(edges)
        self.src = np.empty(2 * m, dtype=np.int64)
        self.dst = np.empty(2 * m, dtype=np.int64)
        for k, (u, v) in enumerate(edges):
            self.src[2 * k], self.dst[2 * k] = u, v
            self.src[2 * k + 1], self.dst[2 * k + 1] = v, u

    @classmethod
    def star(cls, n: int) -> "Graph":
        return cls(n + 1, [(0, k) for k in range(1, n + 1)])

    def clock_rates(self, lam: float, alpha: float) -> np.ndarray:
        v = self.n_vertices
        return np.concatenate([np.ones(v), np.full(v, alpha), np.full(self.src.size, lam)])


def immune_mask(n_vertices: int, variant: Variant) -> np.ndarray:
    """Vertices that become Recovered (rather than Susceptible) on recovery."""
    mask = np.zeros(n_vertices, dtype=np.bool_)
    if variant is Variant.X:
        mask[:] = True
    elif variant is Variant.Y:
        mask[0] = True
    return mask


@njit(cache=True)
def apply_clock(states, clock, nv, src, dst, immune):
    """Apply one clock event in place. Returns the changed vertex or -1."""
    if clock < nv:
        if states[clock] == I:
            states[clock] = R if immune[clock] else S
            return clock
    elif clock < 2 * nv:
        v = clock - nv
        if states[v] == R:
            states[v] = S
            return v
    else:
        e = clock - 2 * nv
        u = src[e]
        v = dst[e]
        if states[u] == I and states[v] == S:
            states[v] = I
            return v
    return -1


@dataclass
class GeneralConfig:
    graph: Graph
    states: np.ndarray
    immune: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int8)
        if self.states.shape != (self.graph.n_vertices,):
            raise ValueError("one state per vertex required")
        if np.any((self.states < 0) | (self.states > 2)):
            raise ValueError("states must be S, I or R")
        if np.any((self.states == R) & ~self.immune):
            raise ValueError("a vertex without immunity cannot be Recovered")

    def partition(self) -> tuple[set, set, set]:
        return tuple(set(np.flatnonzero(self.states == s).tolist()) for s in (S, I, R))

    @property
    def absorbed(self) -> bool:
        return not np.any(self.states == I)


@dataclass(frozen=True)
class EventDescription:
    time: float
    kind: int
    index: int
    vertex: int
    before: VertexState | None
    after: VertexState | None

    @property
    def changed(self) -> bool:
        return self.after is not None


def step_general(config: GeneralConfig, bundle: ClockBundle) -> tuple[GeneralConfig, EventDescription]:
    """Advance ``config`` to the next clock event of ``bundle``.

    Bundle time is taken to be process time.  Events whose source state does
    not match the rule leave the configuration unchanged.
    """
    if config.absorbed:
        raise ValueError("configuration is absorbed: no infected vertex")
    t, clock = next_bundle_event(bundle, config.time)
    if clock < 0:
        raise ValueError("bundle has no active clock")
    g = config.graph
    states = config.states.copy()
    kind, idx = clock_identity(clock, g.n_vertices)
    target = int(g.dst[idx]) if kind == INFECTION else idx
    before = VertexState(int(states[target]))
    changed = apply_clock(states, clock, g.n_vertices, g.src, g.dst, config.immune)
    after = VertexState(int(states[target])) if changed >= 0 else None
    new = GeneralConfig(g, states, config.immune, t)
    return new, EventDescription(t, kind, idx, target, before if changed >= 0 else None, after)


@njit(cache=True)
def _walk(times, owners, k, states, nv, src, dst, immune, fl, it,
          sustained, snap_t, snap_out):
    """Consume star events from index ``k`` for the current round.

    ``fl = [u_R, u_S, u_end, u_extinct]`` (round-relative times) and
    ``it = [phase, n_inf_leaves, n_rec_leaves, I_R, I_S, events, min_ni,
    n_snaps_done, extinct]`` are updated in place.  Returns
    ``(k, outcome)``.
    """
    n = nv - 1
    nsnap = snap_t.shape[0]
    while k < times.shape[0]:
        t = times[k]
        c = owners[k]
        k += 1
        while it[7] < nsnap and snap_t[it[7]] < t:
            for v in range(nv):
                snap_out[it[7], v] = states[v] == I
            it[7] += 1
        if it[8] == 1:
            # infection is gone; only immunity losses can still happen
            if sustained and c > nv and c < 2 * nv and states[c - nv] == R:
                states[c - nv] = S
                it[2] -= 1
                it[5] += 1
            if c == nv and it[0] == PH_IMMUNE:
                if sustained:
                    it[5] += 1
                states[0] = S
                fl[1] = t
                it[0] = PH_SUSCEPTIBLE
                if sustained:
                    states[0] = I
                    fl[2] = t
                    it[0] = PH_DONE
                    return k, ARTIFICIAL
                it[0] = PH_DONE
                return k, EXTINCT
            continue
        before_root = states[0]
        v = apply_clock(states, c, nv, src, dst, immune)
        if v < 0:
            continue
        it[5] += 1
        if v == 0:
            if before_root == I:
                fl[0] = t
                it[3] = it[1]
                if states[0] == S:
                    fl[1] = t
                    it[4] = it[1]
                    it[0] = PH_SUSCEPTIBLE
                else:
                    it[0] = PH_IMMUNE
            elif before_root == R:
                fl[1] = t
                it[4] = it[1]
                it[0] = PH_SUSCEPTIBLE
            else:
                fl[2] = t
                it[0] = PH_DONE
                return k, REINFECTED
        else:
            if states[v] == I:
                it[1] += 1
            elif states[v] == R:
                it[1] -= 1
                it[2] += 1
                if n - it[2] < it[6]:
                    it[6] = n - it[2]
            elif c < nv:
                it[1] -= 1
            else:
                it[2] -= 1
        if it[1] == 0 and states[0] != I:
            fl[2] = t
            fl[3] = t
            if it[0] == PH_SUSCEPTIBLE:
                if sustained:
                    states[0] = I
                    it[0] = PH_DONE
                    return k, ARTIFICIAL
                it[0] = PH_DONE
                return k, EXTINCT
            # root still immune: keep reading for its immunity clock
            it[8] = 1
    return k, NEED_MORE


@dataclass
class StarRound:
    """Round of a per-vertex star run, with absolute times."""

    index: int
    tau: float
    tau_R: float
    tau_S: float
    end: float
    I: int
    I_R: int
    I_S: int
    succeeded: bool
    snapshots: np.ndarray | None = None
    # round-relative end time, exact on the bundle's clock
    length: float = np.nan


@dataclass
class StarRun:
    params: ProcessParams
    rounds: list[StarRound]
    tau: float
    events: int
    min_non_immune: int
    censored: bool = False
    states: np.ndarray | None = field(default=None, repr=False)

    @property
    def psi(self) -> int:
        return sum(r.succeeded for r in self.rounds)


class BundleCache(dict):
    """Per-round clock bundles for one star run, created on first use.

    Round ``i >= 1`` uses stream ``seed.child(i)``; ``seed.child(0)`` is
    left free for auxiliary draws.
    """

    def __init__(self, params: ProcessParams, seed: SeedSpec):
        super().__init__()
        self.params = params
        self.seed = seed

    def __missing__(self, index: int) -> ClockBundle:
        p = self.params
        alpha = p.alpha if p.variant is not Variant.SIS else 0.0
        b = ClockBundle.for_star(p.n, p.lam, alpha, self.seed.child(index))
        self[index] = b
        return b


def run_star(params: ProcessParams, seed: SeedSpec, horizon: float = 1e8, *,
             sustained: bool = False, round_cap: int | None = None,
             bundles: BundleCache | None = None,
             snapshots: dict[int, np.ndarray] | None = None) -> StarRun:
    """Run the per-vertex process on the star from "root infected, leaves susceptible".

    Round ``i`` (counted from 1) reads ``bundles[i]``, built on stream
    ``seed.child(i)`` and whose time zero is the round's start.  With ``sustained`` the infection is restarted
    at the root whenever it dies out; ``round_cap`` then bounds the number
    of rounds.  ``snapshots`` maps a round index to sorted round-relative
    instants at which the infected set is recorded.
    """
    if sustained and params.variant is not Variant.X:
        raise ValueError("the sustained process is defined for variant X")
    if sustained and (round_cap is None or round_cap < 1):
        raise ValueError("a sustained run needs round_cap >= 1")
    if bundles is None:
        bundles = BundleCache(params, seed)
    n = params.n
    graph = Graph.star(n)
    nv = n + 1
    immune = immune_mask(nv, params.variant)
    states = np.zeros(nv, dtype=np.int8)
    states[0] = I
    n_inf = 0
    n_rec = 0
    t0 = 0.0
    events = 0
    min_ni = n
    rounds: list[StarRound] = []
    censored = False
    tau = None
    empty_snap = np.empty(0)
    while True:
        index = len(rounds) + 1
        bundle = bundles[index]
        snap_t = empty_snap if snapshots is None else np.asarray(snapshots.get(index, empty_snap), float)
        snap_out = np.zeros((snap_t.size, nv), dtype=np.bool_)
        fl = np.full(4, np.nan)
        it = np.array([PH_INFECTED, n_inf, n_rec, 0, 0, 0, min_ni, 0, 0], dtype=np.int64)
        I_start = n_inf
        k = 0
        while True:
            if k >= bundle.times.size:
                if t0 + bundle.horizon > horizon:
                    break
                bundle.extend()
                if k >= bundle.times.size:
                    continue
            k, outcome = _walk(bundle.times, bundle.owners, k, states, nv, graph.src,
                               graph.dst, immune, fl, it, sustained, snap_t, snap_out)
            if outcome != NEED_MORE:
                break
        n_inf, n_rec = int(it[1]), int(it[2])
        events += int(it[5])
        min_ni = int(it[6])
        if it[8] == 1 and not sustained and np.isnan(fl[1]):
            # extinct while the root is immune; cut off by the horizon
            outcome = EXTINCT
        if outcome == NEED_MORE or (t0 + (fl[2] if outcome != NEED_MORE else 0)) > horizon:
            censored = True
            tau = horizon
            for s in range(int(it[7]), snap_t.size):
                snap_out[s] = states == I
            rounds.append(StarRound(index, t0, t0 + fl[0], t0 + fl[1], np.nan, I_start,
                                    int(it[3]), int(it[4]), False, snap_out))
            break
        # pending snapshots see the state at the end of the round
        for s in range(int(it[7]), snap_t.size):
            snap_out[s] = states == I
        succeeded = outcome == REINFECTED
        end = t0 + fl[2]
        rounds.append(StarRound(index, t0, t0 + fl[0], t0 + fl[1], end, I_start,
                                int(it[3]), int(it[4]), succeeded, snap_out, float(fl[2])))
        if outcome == EXTINCT:
            tau = end
            break
        if outcome == ARTIFICIAL and tau is None:
            tau = t0 + fl[3]
        t0 = end
        if round_cap is not None and len(rounds) >= round_cap:
            break
    return StarRun(params, rounds, tau if tau is not None else t0, events, min_ni,
                   censored, states)

"""Addressable random streams and Poisson clock bundles.

Every stream is a ``numpy.random.Generator`` backed by the counter-based
Philox bit generator, seeded from ``SeedSequence(master_seed,
spawn_key=stream_path)``.  Two identical ``SeedSpec`` values always give the
same draws; distinct paths give independent streams.

A :class:`ClockBundle` holds one Poisson point process per clock of the
graphical representation (recovery ``Q_v``, deimmunization ``D_v`` and one
infection clock per directed edge).  Events are materialized lazily in
time chunks: for a chunk ``[kT, (k+1)T)`` each clock receives a
``Poisson(rate * T)`` number of points placed uniformly in the chunk.  The
realization therefore does not depend on which process reads the bundle
or in what order, which is what the shared-clock coupling needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_PATH_DEPTH = 4

# target number of events per materialized chunk
_CHUNK_EVENTS = 512


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        path = tuple(int(p) for p in self.stream_path)
        if any(p < 0 for p in path):
            raise ValueError("stream_path entries must be non-negative")
        object.__setattr__(self, "stream_path", path)

    def child(self, *index: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.stream_path + tuple(index))


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    """Return the generator addressed by ``seed``.

    The output is a pure function of ``(master_seed, stream_path)``.
    """
    if len(seed.stream_path) > MAX_PATH_DEPTH:
        raise ValueError(
            f"stream_path depth {len(seed.stream_path)} exceeds {MAX_PATH_DEPTH}"
        )
    ss = np.random.SeedSequence(seed.master_seed, spawn_key=seed.stream_path)
    return np.random.Generator(np.random.Philox(ss))


def sample_exponential(stream: np.random.Generator, rate: float) -> float:
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate!r}")
    return stream.standard_exponential() / rate


# clock kinds; a clock id is kind * n_vertices + vertex for Q and D, and
# 2 * n_vertices + edge index for directed infection clocks
RECOVERY, DEIMMUNIZATION, INFECTION = 0, 1, 2


def clock_identity(clock: int, n_vertices: int) -> tuple[int, int]:
    """Decode a clock id into ``(kind, vertex or directed-edge index)``."""
    if clock < n_vertices:
        return RECOVERY, clock
    if clock < 2 * n_vertices:
        return DEIMMUNIZATION, clock - n_vertices
    return INFECTION, clock - 2 * n_vertices


@dataclass
class ClockBundle:
    """Independent Poisson clocks for one graph, materialized on demand.

    Parameters
    ----------
    rates : array of shape (n_clocks,)
        Rate of each clock; zero-rate clocks never fire.
    n_vertices : int
        Used only to decode clock identities.
    seed : SeedSpec
        Address of the bundle's stream.
    """

    rates: np.ndarray
    n_vertices: int
    seed: SeedSpec
    times: np.ndarray = field(init=False, repr=False)
    owners: np.ndarray = field(init=False, repr=False)
    horizon: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if np.any(self.rates < 0):
            raise ValueError("clock rates must be non-negative")
        self._rng = derive_stream(self.seed)
        total = float(self.rates.sum())
        self.chunk_length = _CHUNK_EVENTS / total if total > 0 else np.inf
        self.times = np.empty(0)
        self.owners = np.empty(0, dtype=np.int64)

    @classmethod
    def for_star(cls, n: int, lam: float, alpha: float, seed: SeedSpec) -> "ClockBundle":
        """Bundle for the star with root 0 and leaves 1..n.

        Directed edge ``2k`` is root -> leaf ``k+1`` and ``2k+1`` the reverse.
        """
        v = n + 1
        rates = np.concatenate(
            [np.ones(v), np.full(v, alpha), np.full(2 * n, lam)]
        )
        return cls(rates, v, seed)

    def extend(self) -> None:
        """Materialize the next time chunk."""
        if not np.isfinite(self.chunk_length):
            self.horizon = np.inf
            return
        t0, T = self.horizon, self.chunk_length
        counts = self._rng.poisson(self.rates * T)
        owners = np.repeat(np.arange(self.rates.size, dtype=np.int64), counts)
        times = t0 + self._rng.random(owners.size) * T
        # fixed total order on clock ids breaks (measure-zero) ties
        order = np.lexsort((owners, times))
        self.times = np.concatenate([self.times, times[order]])
        self.owners = np.concatenate([self.owners, owners[order]])
        self.horizon = t0 + T

    def ensure(self, t: float) -> None:
        """Materialize every event up to time ``t``."""
        while self.horizon <= t and np.isfinite(self.chunk_length):
            self.extend()
        if not np.isfinite(self.chunk_length):
            self.horizon = np.inf

    def event_index_after(self, after: float) -> int:
        """Index of the first event strictly after ``after``, materializing as needed."""
        while True:
            k = int(np.searchsorted(self.times, after, side="right"))
            if k < self.times.size or not np.isfinite(self.chunk_length):
                return k
            self.extend()


def next_bundle_event(bundle: ClockBundle, after: float) -> tuple[float, int]:
    """Earliest event strictly after ``after`` and the id of its clock.

    Returns ``(inf, -1)`` when every clock has rate zero.
    """
    if after < 0:
        raise ValueError("after must be non-negative")
    k = bundle.event_index_after(after)
    if k >= bundle.times.size:
        return np.inf, -1
    return float(bundle.times[k]), int(bundle.owners[k])

"""Shared-clock coupling of the X and Y processes, and the sustained process.

Both coupled processes read the same per-round clock bundles, each aligned
at its own round start.  Under this construction the Y process (immunity
at the root only) dominates X round by round, which the audit checks on
every realization.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .general import BundleCache, StarRun, run_star
from .model import ProcessParams, Variant
from .rng import SeedSpec, derive_stream
from .rounds import RoundRecord

# interior instants sampled per round for the containment check
CONTAINMENT_SAMPLES = 8


class ConsistencyError(RuntimeError):
    """A pathwise property that must always hold was violated."""


@dataclass
class CoupledRun:
    x: StarRun
    y: StarRun
    recovery_counts: list[tuple[int, int]]
    flags: dict[str, bool]

    @property
    def psi_x(self) -> int:
        return self.x.psi

    @property
    def psi_y(self) -> int:
        return self.y.psi

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def summary(self, seed: SeedSpec | None = None) -> dict:
        out = {"psi_x": self.psi_x, "psi_y": self.psi_y,
               "rounds_x": len(self.x.rounds), "rounds_y": len(self.y.rounds),
               **self.flags}
        if seed is not None:
            out = {"master_seed": seed.master_seed, "stream_path": list(seed.stream_path), **out}
        return out

    def json_line(self, seed: SeedSpec | None = None) -> str:
        return json.dumps(self.summary(seed), sort_keys=False)


def _instants(rng, d: float) -> np.ndarray:
    inner = np.sort(rng.random(CONTAINMENT_SAMPLES) * d)
    return np.concatenate([[0.0], inner, [d]])


def run_coupled_xy(params: ProcessParams, seed: SeedSpec, round_cap: int | None = None,
                   horizon: float = 1e8, strict: bool = True) -> CoupledRun:
    """Run X and Y on shared per-round clock bundles and audit dominance.

    ``params.variant`` is ignored.  Y runs to its own extinction unless
    ``round_cap`` stops it first.  Infected sets are compared at each
    round's start and end and at 8 uniform interior instants, using
    draws from ``seed.child(0)``.  With ``strict`` a failed check raises
    :class:`ConsistencyError`; otherwise it is only reported in ``flags``.
    """
    px = ProcessParams(params.n, params.lam, params.alpha, Variant.X)
    py = ProcessParams(params.n, params.lam, params.alpha, Variant.Y)
    bundles = BundleCache(px, seed)
    y0 = run_star(py, seed, horizon, bundles=bundles, round_cap=round_cap)

    # sampling instants follow Y's rounds; both processes then run on the
    # cached bundles while recording infected sets
    rng = derive_stream(seed.child(0))
    snaps = {}
    for k, ry in enumerate(y0.rounds):
        d = ry.length
        if np.isfinite(d):
            snaps[k + 1] = _instants(rng, d)
    x = run_star(px, seed, horizon, bundles=bundles, snapshots=snaps)
    y = run_star(py, seed, horizon, bundles=bundles, round_cap=round_cap, snapshots=snaps)

    common = min(len(x.rounds), len(y.rounds))
    pairs = [(x.rounds[k].I_R, y.rounds[k].I_R) for k in range(common)]
    contained = True
    for k in range(common):
        sx, sy = x.rounds[k].snapshots, y.rounds[k].snapshots
        if sx is not None and sx.size and np.any(sx & ~sy):
            contained = False
    durations = True
    for k in range(common):
        rx, ry = x.rounds[k], y.rounds[k]
        if rx.succeeded and not (ry.succeeded and ry.length <= rx.length):
            durations = False
    y_capped = bool(y.rounds[-1].succeeded)
    psi_x = min(x.psi, len(y.rounds)) if y_capped else x.psi
    flags = {
        "psi_ok": psi_x <= y.psi,
        "recovery_ok": all(a <= b for a, b in pairs) and (y_capped or len(x.rounds) <= len(y.rounds)),
        "duration_ok": durations,
        "containment_ok": contained,
        "replay_ok": y.psi == y0.psi and len(y.rounds) == len(y0.rounds),
    }
    run = CoupledRun(x, y, pairs, flags)
    if strict and not run.ok:
        bad = [k for k, v in flags.items() if not v]
        raise ConsistencyError(f"coupling audit failed ({', '.join(bad)}) for {seed}")
    return run


@dataclass
class SustainedRun:
    run: StarRun
    records: list[RoundRecord]
    extinction_time: float

    @property
    def failed_rounds(self) -> list[RoundRecord]:
        return [r for r in self.records if not r.succeeded]


def run_sustained(params: ProcessParams, seed: SeedSpec, round_cap: int,
                  horizon: float = 1e8) -> SustainedRun:
    """SIRS on the star with the root reinfected whenever the infection dies.

    If the infection dies while the root is immune, the root is infected
    when its immunity ends; otherwise immediately.  A round counts as
    successful only if a leaf reinfects the root.  Exactly ``round_cap``
    rounds are produced unless the horizon intervenes.  ``extinction_time``
    is the survival time of the plain process read from the same clocks.
    """
    if params.variant is not Variant.X:
        raise ValueError("the sustained process is defined for variant X")
    run = run_star(params, seed, horizon, sustained=True, round_cap=round_cap)
    records = [RoundRecord.build(r.index, r.tau, r.tau_R, r.tau_S, r.I, r.I_R, r.I_S,
                                 r.succeeded) for r in run.rounds]
    return SustainedRun(run, records, run.tau)

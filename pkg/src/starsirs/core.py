"""Survival runs from "root infected, every leaf susceptible"."""
from __future__ import annotations

import enum

import numpy as np

from . import lumped
from .general import run_star
from .model import ProcessParams, SurvivalSample, Variant
from .rng import SeedSpec, derive_stream
from .rounds import RoundRecord

DEFAULT_HORIZON = 1e8
# the per-vertex engine keeps O(n) state per round and is capped here
GENERAL_MAX_N = 10_000


class Engine(str, enum.Enum):
    LUMPED = "lumped"
    GENERAL = "general"


class CapacityError(RuntimeError):
    """Raised when a request exceeds what an engine supports."""


def _records_from_arrays(rec_t, rec_n, rounds, final_failed=True):
    out = []
    for k in range(rounds):
        tau, tau_r, tau_s = (float(x) for x in rec_t[k])
        succeeded = k < rounds - 1 or not final_failed
        out.append(RoundRecord.build(k + 1, tau, tau_r, tau_s, int(rec_n[k, 0]),
                                     int(rec_n[k, 1]), int(rec_n[k, 2]), succeeded))
    return out


def run_lumped(params: ProcessParams, seed: SeedSpec, horizon: float = DEFAULT_HORIZON,
               record: bool = True, capacity: int = 256):
    """Lumped-chain survival run. Returns ``(SurvivalSample, rounds)``."""
    while True:
        rng = derive_stream(seed)
        cap = capacity if record else 0
        rec_t = np.empty((cap, 3))
        rec_n = np.zeros((cap, 3), dtype=np.int64)
        t, rounds, events, min_ni, status, _ = lumped.run_kernel(
            rng, params.n, params.lam, params.alpha, params.variant.code, horizon,
            lumped.I, 0, 0, False, rec_t, rec_n, np.empty(0), np.empty((0, 3), np.int64))
        if not record or rounds <= cap:
            break
        capacity = max(2 * capacity, rounds + 1)
    censored = status == lumped.CENSORED
    frac = min_ni / params.n if params.n else 1.0
    sample = SurvivalSample(float(t), int(rounds - 1),
                            int(events), frac, censored)
    records = _records_from_arrays(rec_t, rec_n, rounds) if record else []
    if censored and records:
        records[-1] = records[-1].replace(succeeded=False)
    return sample, records


def lumped_trajectory(params: ProcessParams, seed: SeedSpec, horizon: float = DEFAULT_HORIZON,
                      capacity: int = 4096):
    """Event log of the lumped run addressed by ``seed``.

    Logging draws no random numbers, so this is the same realization as
    :func:`run_lumped` with the same seed.  Returns ``(times, states,
    records)`` where ``states`` rows are ``(root, infected, recovered)``
    after each event.
    """
    while True:
        rng = derive_stream(seed)
        rec_t = np.empty((capacity, 3))
        rec_n = np.zeros((capacity, 3), dtype=np.int64)
        log_t = np.empty(capacity)
        log_s = np.empty((capacity, 3), dtype=np.int64)
        t, rounds, events, _, _, nlog = lumped.run_kernel(
            rng, params.n, params.lam, params.alpha, params.variant.code, horizon,
            lumped.I, 0, 0, False, rec_t, rec_n, log_t, log_s)
        if events + 1 <= capacity and rounds <= capacity:
            break
        capacity = 2 * max(capacity, events + 1)
    return log_t[:nlog].copy(), log_s[:nlog].copy(), _records_from_arrays(rec_t, rec_n, rounds)


def run_general(params: ProcessParams, seed: SeedSpec, horizon: float = DEFAULT_HORIZON):
    if params.n > GENERAL_MAX_N:
        raise CapacityError(f"general engine supports n <= {GENERAL_MAX_N}, got {params.n}")
    run = run_star(params, seed, horizon)
    records = [RoundRecord.build(r.index, r.tau, r.tau_R, r.tau_S, r.I, r.I_R, r.I_S,
                                 r.succeeded) for r in run.rounds]
    frac = run.min_non_immune / params.n if params.n else 1.0
    sample = SurvivalSample(float(run.tau), run.psi, run.events, frac, run.censored)
    return sample, records


def run_survival(params: ProcessParams, seed: SeedSpec, engine: Engine | str = Engine.LUMPED,
                 horizon: float = DEFAULT_HORIZON, record: bool = True):
    """Simulate until extinction or ``horizon``.

    Returns ``(SurvivalSample, list[RoundRecord])``.  ``psi`` counts the
    rounds that ended with the root reinfected by a leaf; a censored run
    reports the rounds completed before the horizon.
    """
    engine = Engine(engine)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if engine is Engine.LUMPED:
        return run_lumped(params, seed, horizon, record)
    return run_general(params, seed, horizon)


def run_replicas(params: ProcessParams, seed: SeedSpec, replicas: int,
                 engine: Engine | str = Engine.LUMPED, horizon: float = DEFAULT_HORIZON,
                 start: int = 0) -> list[SurvivalSample]:
    """Independent replicas; replica ``k`` uses stream ``seed.child(k)``."""
    return [run_survival(params, seed.child(k), engine, horizon, record=False)[0]
            for k in range(start, start + replicas)]


def survival_arrays(samples) -> dict[str, np.ndarray]:
    return {
        "tau": np.array([s.tau for s in samples]),
        "psi": np.array([s.psi for s in samples], dtype=np.int64),
        "events": np.array([s.events for s in samples], dtype=np.int64),
        "censored": np.array([s.censored for s in samples], dtype=bool),
        "min_non_immune_fraction": np.array([s.min_non_immune_fraction for s in samples]),
    }


__all__ = ["Engine", "CapacityError", "run_survival", "run_replicas", "survival_arrays",
           "Variant", "DEFAULT_HORIZON"]

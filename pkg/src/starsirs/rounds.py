"""Round records of a star trajectory and their classification.

A round starts when the root is infected, continues through the root's
infected period (length ``xi``) and immune period (length ``zeta``), and
succeeds if a leaf reinfects the root afterwards.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

ROUND_FIELDS = ("index", "tau_i", "xi_i", "zeta_i", "tau_i_R", "tau_i_S",
                "I_i", "I_i_R", "I_i_S", "succeeded")


class CorruptTrajectoryError(ValueError):
    """The event stream cannot come from a valid run."""


@dataclass(frozen=True)
class RoundRecord:
    index: int
    tau_i: float
    xi_i: float
    zeta_i: float
    tau_i_R: float
    tau_i_S: float
    I_i: int
    I_i_R: int
    I_i_S: int
    succeeded: bool

    @classmethod
    def build(cls, index, tau, tau_R, tau_S, I, I_R, I_S, succeeded) -> "RoundRecord":
        """Record from the three defining instants; durations are derived."""
        return cls(int(index), float(tau), float(tau_R - tau), float(tau_S - tau_R),
                   float(tau_R), float(tau_S), int(I), int(I_R), int(I_S), bool(succeeded))

    def replace(self, **changes) -> "RoundRecord":
        return dataclasses.replace(self, **changes)

    def as_row(self) -> list:
        return [getattr(self, f) for f in ROUND_FIELDS]


def check_records(records, immune_root: bool = True) -> None:
    """Raise ``CorruptTrajectoryError`` if the round sequence is inconsistent.

    With ``immune_root=False`` (no immunity) ``tau_i_S == tau_i_R`` is
    expected instead of a strict increase.
    """
    if not records:
        raise CorruptTrajectoryError("a run has at least one round")
    if records[0].tau_i != 0.0:
        raise CorruptTrajectoryError("the first round starts at time 0")
    for k, r in enumerate(records):
        if r.index != k + 1:
            raise CorruptTrajectoryError(f"round {k + 1} has index {r.index}")
        if math.isnan(r.tau_i_R) or math.isnan(r.tau_i_S):
            if k != len(records) - 1:
                raise CorruptTrajectoryError(f"round {r.index} is incomplete")
            continue
        if not r.tau_i < r.tau_i_R:
            raise CorruptTrajectoryError(f"round {r.index}: root recovery before infection")
        ok = r.tau_i_R < r.tau_i_S if immune_root else r.tau_i_R == r.tau_i_S
        if not ok:
            raise CorruptTrajectoryError(f"round {r.index}: bad immune period")
        last = k == len(records) - 1
        if r.succeeded == last:
            raise CorruptTrajectoryError("exactly the final round must fail")
        if not last and not records[k + 1].tau_i > r.tau_i_S:
            raise CorruptTrajectoryError(f"round {r.index + 1} starts too early")


def extract_rounds(times, states, final_immunity_end: float | None = None) -> list[RoundRecord]:
    """Rounds of a lumped trajectory.

    Parameters
    ----------
    times : array of shape (m,)
        Event times, starting with 0.
    states : array of shape (m, 2) or (m, 3)
        Post-event ``(root, infected leaves[, recovered leaves])`` with root
        coded 0/1/2 for S/I/R.  Row 0 is the initial state and must have the
        root infected.
    final_immunity_end : float, optional
        End of the root's immune period when the infection dies out while
        the root is still immune (that instant is not part of the
        trajectory).  Left as NaN if not given.

    Returns
    -------
    list of RoundRecord
        The final round is marked failed; all earlier rounds succeeded.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states)
    if times.ndim != 1 or states.shape[0] != times.size or times.size == 0:
        raise CorruptTrajectoryError("times and states must align")
    if times[0] != 0.0 or np.any(np.diff(times) < 0) or not np.all(np.isfinite(times)):
        raise CorruptTrajectoryError("event times must start at 0 and be non-decreasing")
    if states[0, 0] != 1:
        raise CorruptTrajectoryError("the trajectory must begin with the root infected")
    rounds: list[list] = []
    cur = [0.0, math.nan, math.nan, int(states[0, 1]), 0, 0]
    prev = 1
    for t, row in zip(times[1:], states[1:]):
        root, inf = int(row[0]), int(row[1])
        if root == prev:
            continue
        if prev == 1:
            cur[1] = t
            cur[4] = inf
            if root == 0:
                cur[2] = t
                cur[5] = inf
        elif prev == 2 and root == 0:
            cur[2] = t
            cur[5] = inf
        elif prev == 0 and root == 1:
            rounds.append(cur)
            cur = [t, math.nan, math.nan, inf, 0, 0]
        else:
            raise CorruptTrajectoryError(f"impossible root change {prev} -> {root} at t={t}")
        prev = root
    if prev == 2 and final_immunity_end is not None:
        cur[2] = float(final_immunity_end)
    rounds.append(cur)
    out = []
    for k, (tau, tr, ts, a, b, c) in enumerate(rounds):
        out.append(RoundRecord.build(k + 1, tau, tr, ts, a, b, c, k < len(rounds) - 1))
    return out


def successful_rounds(records) -> int:
    return sum(r.succeeded for r in records)


@dataclass(frozen=True)
class RoundClassifierConfig:
    epsilon: float = 0.25

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")


@dataclass(frozen=True)
class RoundClassification:
    labels: tuple[str, ...]
    bad_runs: tuple[int, ...]

    @property
    def good_fraction(self) -> float:
        return sum(lab == "good" for lab in self.labels) / len(self.labels) if self.labels else math.nan


def classify_rounds(records, config: RoundClassifierConfig = RoundClassifierConfig()) -> RoundClassification:
    """Label each round good (root infected longer than epsilon) or bad.

    ``bad_runs`` lists the lengths of maximal stretches of consecutive bad
    rounds, in order.
    """
    labels = []
    runs = []
    streak = 0
    for r in records:
        if r.xi_i > config.epsilon:
            labels.append("good")
            if streak:
                runs.append(streak)
            streak = 0
        else:
            labels.append("bad")
            streak += 1
    if streak:
        runs.append(streak)
    return RoundClassification(tuple(labels), tuple(runs))


def write_rounds_csv(records, fh) -> None:
    """Write one row per round, columns in ``ROUND_FIELDS`` order."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ROUND_FIELDS)
    for r in records:
        w.writerow([repr(v) if isinstance(v, float) else int(v) for v in r.as_row()])


def read_rounds_csv(fh) -> list[RoundRecord]:
    rows = csv.DictReader(fh)
    out = []
    for row in rows:
        out.append(RoundRecord(
            int(row["index"]), float(row["tau_i"]), float(row["xi_i"]), float(row["zeta_i"]),
            float(row["tau_i_R"]), float(row["tau_i_S"]), int(row["I_i"]), int(row["I_i_R"]),
            int(row["I_i_S"]), row["succeeded"] in ("1", "True")))
    return out

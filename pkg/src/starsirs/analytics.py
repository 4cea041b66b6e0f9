"""Closed-form round quantities, special-function numerics and the exact
small-star oracle.

Gamma and Beta ratios are evaluated through ``scipy.special.gammaln`` so
that quantities such as ``Gamma(a+1)/Gamma(a+alpha+1)`` stay finite for
large ``a``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.special import gammaln, logsumexp

from .model import (LEAF_DEIMMUNIZATION, LEAF_INFECTION, LEAF_RECOVERY, ROOT_DEIMMUNIZATION,
                    ROOT_RECOVERY, ROOT_REINFECTION, ProcessParams, StarState, Variant,
                    VertexState, star_transition_rates)

# largest lumped chain the oracle will solve
ORACLE_MAX_STATES = 10_000
# above this many transient states a sparse LU is used
_DENSE_LIMIT = 3_000
# node separation below which divided differences use derivatives
_CONFLUENT_GAP = 1e-6


class CapacityError(RuntimeError):
    """Raised when a request exceeds what the oracle supports."""


def _check_alpha(alpha):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")


def _check_count(a):
    if int(a) != a or a < 0:
        raise ValueError(f"a must be a non-negative integer, got {a!r}")
    return int(a)


# -- leaves still infected when the root's immunity ends ---------------------

@dataclass(frozen=True)
class PmfTable:
    """Distribution of the number of infected leaves left when immunity ends."""

    a: int
    alpha: float
    p: np.ndarray

    def __getitem__(self, b: int) -> float:
        return float(self.p[b])


def _log_pmf(a: int, alpha: float) -> np.ndarray:
    b = np.arange(a + 1, dtype=float)
    return (math.log(alpha) + gammaln(a + 1.0) - gammaln(a + alpha + 1.0)
            + gammaln(b + alpha) - gammaln(b + 1.0))


def immunity_survival_pmf(a: int, alpha: float) -> PmfTable:
    """Law of how many of ``a`` infected leaves outlive an Exp(alpha) immunity.

    Each leaf recovers at rate 1, independently of the immune period.  For
    ``a > 0``, ``p(b) = alpha * C(a, b) * Beta(b + alpha, a - b + 1)``.
    """
    a = _check_count(a)
    _check_alpha(alpha)
    if a == 0:
        return PmfTable(0, float(alpha), np.ones(1))
    return PmfTable(a, float(alpha), np.exp(_log_pmf(a, alpha)))


def round_failure_prob(a: int, lam: float, alpha: float) -> float:
    """Probability that a round fails given ``a`` infected leaves at root recovery.

    A leaf still infected when the root's immunity ends reinfects it before
    recovering with probability ``lam / (1 + lam)``, so the round fails with
    probability ``E[(1 + lam)^-B]`` where ``B`` follows
    :func:`immunity_survival_pmf`.
    """
    a = _check_count(a)
    _check_alpha(alpha)
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    if a == 0:
        return 1.0
    b = np.arange(a + 1, dtype=float)
    return float(np.exp(logsumexp(_log_pmf(a, alpha) - b * math.log1p(lam))))


def sis_round_failure_prob(a: int, lam: float) -> float:
    """Round-failure probability without immunity: every leaf survives the zero-length period."""
    a = _check_count(a)
    return float((1.0 + lam) ** (-a))


def conditional_reinfection_gap_mean(b: int, lam: float) -> float:
    """Mean time from immunity end to root reinfection, given that it happens.

    Starts from ``b`` infected leaves and a susceptible root; solved by
    first-step analysis on the number of still-infected leaves.
    """
    b = _check_count(b)
    if b < 1:
        raise ValueError("b must be positive")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    p_inf = lam / (lam + 1.0)
    p_rec = 1.0 / (lam + 1.0)
    success = 0.0
    weighted = 0.0
    for j in range(1, b + 1):
        success = p_inf + p_rec * success
        weighted = success / ((lam + 1.0) * j) + p_rec * weighted
    return weighted / success


# -- series --------------------------------------------------------------------

def gautschi_series(alpha: float, x: float, tol: float = 1e-12) -> float:
    """``sum_{b >= 0} Gamma(b + alpha) / Gamma(b + 1) * x**b`` to relative error ``tol``.

    For ``alpha <= 1`` the terms are at most ``b**(alpha - 1) * x**b``
    (Gautschi's inequality), so the tail after term ``b`` is below
    ``(b + 1)**(alpha - 1) * x**(b + 1) / (1 - x)``.  For ``alpha > 1`` that
    envelope is not an upper bound; there the term ratio
    ``r_b = x (b + alpha) / (b + 1)`` decreases in ``b`` and the tail is
    bounded geometrically by ``t_b r_b / (1 - r_b)`` once ``r_b < 1``.
    """
    _check_alpha(alpha)
    if not 0 < x < 1:
        raise ValueError(f"x must lie in (0, 1), got {x!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    lx = math.log(x)
    total = 0.0
    comp = 0.0
    b = 0
    block = 256
    while True:
        idx = np.arange(b, b + block, dtype=float)
        terms = np.exp(gammaln(idx + alpha) - gammaln(idx + 1.0) + idx * lx)
        for j, t in enumerate(terms):
            # Kahan summation keeps long sums near machine precision
            y = t - comp
            s = total + y
            comp = (s - total) - y
            total = s
            bj = b + j
            if alpha <= 1:
                tail = math.exp((alpha - 1) * math.log(bj + 1) + (bj + 1) * lx) / (1 - x)
            else:
                r = x * (bj + alpha) / (bj + 1)
                tail = t * r / (1 - r) if r < 1 else math.inf
            if bj >= 1 and tail < tol * total:
                return total
        b += block
        if b > 10**8:
            raise RuntimeError("series did not converge")


def gautschi_closed_form(alpha: float, x: float) -> float:
    """Exact value ``Gamma(alpha) (1 - x)**-alpha`` of the same series."""
    return math.exp(math.lgamma(alpha) - alpha * math.log1p(-x))


# -- elementary bounds ---------------------------------------------------------

def gamma_tail_bound(n: int, alpha: float, t: float) -> float:
    """Chernoff bound ``((1 + t) e^-t)**n`` on ``P(Gamma(n, alpha) >= (1 + t) n / alpha)``."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    _check_alpha(alpha)
    if not t > 0:
        raise ValueError("t must be positive")
    return math.exp(n * (math.log1p(t) - t))


def expected_max_exponentials(n: int, lam: float) -> float:
    """Mean of the maximum of ``n`` i.i.d. Exp(lam) variables, ``H_n / lam``."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return math.fsum(1.0 / k for k in range(1, int(n) + 1)) / lam


def max_exponentials_bound(n: int, lam: float) -> float:
    """The upper bound ``(1 + log n) / lam`` on :func:`expected_max_exponentials`."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    return (1.0 + math.log(n)) / lam


def prop_s_constant(alpha: float) -> float:
    """Floor fraction ``min(alpha / (16 (alpha + 1)^2), e^-alpha / 8)``."""
    _check_alpha(alpha)
    return min(alpha / (16.0 * (alpha + 1.0) ** 2), math.exp(-alpha) / 8.0)


def conditioned_exponential_rate(a: float, b: float) -> float:
    """Rate of Exp(a) conditioned on being smaller than an independent Exp(b)."""
    if not (a > 0 and b > 0):
        raise ValueError("rates must be positive")
    return a + b


# -- single leaf under a permanently infected root -------------------------------

def leaf_generator(lam: float, alpha: float) -> np.ndarray:
    """Generator on (S, I, R) of one leaf whose root stays infected."""
    return np.array([[-lam, lam, 0.0],
                     [0.0, -1.0, 1.0],
                     [alpha, 0.0, -alpha]])


def expm_taylor(a: np.ndarray, terms: int = 24) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    a = np.asarray(a, dtype=float)
    norm = np.abs(a).sum(axis=1).max()
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    b = a / 2.0**s
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms + 1):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def leaf_transition_matrix(x: float, lam: float, alpha: float) -> np.ndarray:
    """Transition probabilities of one leaf over time ``x``, rows/cols S, I, R."""
    if not x >= 0:
        raise ValueError("x must be non-negative")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    _check_alpha(alpha)
    return expm_taylor(leaf_generator(lam, alpha) * x)


def _divided_difference(nodes, x: float) -> float:
    """Divided difference of ``r -> exp(-r x)`` over ``nodes``.

    Nodes closer than ``_CONFLUENT_GAP`` are treated as coincident, using
    ``d^m/dr^m exp(-r x) = (-x)^m exp(-r x)``.
    """
    z = sorted(float(v) for v in nodes)
    m = len(z)
    table = [math.exp(-v * x) for v in z]
    for order in range(1, m):
        nxt = []
        for i in range(m - order):
            lo, hi = z[i], z[i + order]
            if hi - lo < _CONFLUENT_GAP:
                nxt.append((-x) ** order * math.exp(-lo * x) / math.factorial(order))
            else:
                nxt.append((table[i + 1] - table[i]) / (hi - lo))
        table = nxt
    return table[0]


def single_infection_path_prob(x: float, lam: float) -> float:
    """``P(H <= x < H + Q)`` for independent ``H ~ Exp(lam)``, ``Q ~ Exp(1)``."""
    return -lam * _divided_difference([lam, 1.0], x)


def immune_then_infection_path_prob(x: float, lam: float, alpha: float) -> float:
    """``P(D + H <= x < D + H + Q)`` with ``D ~ Exp(alpha)``, ``H ~ Exp(lam)``, ``Q ~ Exp(1)``."""
    return alpha * lam * _divided_difference([alpha, lam, 1.0], x)


# -- exact oracle for the lumped chain ------------------------------------------

_STATE_CODE = {VertexState.S: 0, VertexState.I: 1, VertexState.R: 2}


def enumerate_states(params: ProcessParams) -> list[tuple[int, int, int]]:
    """Lumped states ``(root, i, r)`` in a fixed order, absorbing ones included."""
    n = params.n
    roots = (1, 0) if params.variant is Variant.SIS else (1, 0, 2)
    out = []
    for root in roots:
        for i in range(n + 1):
            rmax = n - i if params.variant is Variant.X else 0
            for r in range(rmax + 1):
                out.append((root, i, r))
    return out


def lumped_state_count(params: ProcessParams) -> int:
    n = params.n
    if params.variant is Variant.X:
        return 3 * (n + 1) * (n + 2) // 2
    return (2 if params.variant is Variant.SIS else 3) * (n + 1)


def _target(state, kind, variant):
    root, i, r = state
    if kind == ROOT_RECOVERY:
        return (0 if variant is Variant.SIS else 2, i, r)
    if kind == ROOT_DEIMMUNIZATION:
        return (0, i, r)
    if kind == ROOT_REINFECTION:
        return (1, i, r)
    if kind == LEAF_INFECTION:
        return (root, i + 1, r)
    if kind == LEAF_RECOVERY:
        return (root, i - 1, r + 1) if variant is Variant.X else (root, i - 1, r)
    if kind == LEAF_DEIMMUNIZATION:
        return (root, i, r - 1)
    raise ValueError(kind)


@dataclass
class OracleSolution:
    params: ProcessParams
    states: list[tuple[int, int, int]]
    expected_time: np.ndarray
    expected_psi: np.ndarray

    @property
    def initial_index(self) -> int:
        return self.states.index((1, 0, 0))

    @property
    def mean_survival(self) -> float:
        return float(self.expected_time[self.initial_index])

    @property
    def mean_psi(self) -> float:
        return float(self.expected_psi[self.initial_index])

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["root", "infected", "recovered", "expected_time", "expected_psi"])
        names = "SIR"
        for (root, i, r), t, p in zip(self.states, self.expected_time, self.expected_psi):
            w.writerow([names[root], i, r, repr(float(t)), repr(float(p))])


def exact_mean_survival(params: ProcessParams) -> OracleSolution:
    """Expected extinction time and successful-round count from every state.

    Solves ``(-Q_TT) m = 1`` on the transient states of the lumped chain
    and ``(-Q_TT) h = c`` with ``c`` the rate of root reinfection, which
    counts leaf-to-root infections.  Absorbing states get 0.
    """
    count = lumped_state_count(params)
    if count > ORACLE_MAX_STATES:
        raise CapacityError(f"{count} lumped states exceed the oracle limit {ORACLE_MAX_STATES}")
    states = enumerate_states(params)
    transient = [s for s in states if not (s[1] == 0 and s[0] != 1)]
    index = {s: k for k, s in enumerate(transient)}
    m = len(transient)
    rows, cols, vals = [], [], []
    reward = np.zeros(m)
    for k, s in enumerate(transient):
        st = StarState(VertexState(s[0]), s[1], s[2])
        out = 0.0
        for kind, rate in star_transition_rates(st, params):
            if rate == 0:
                continue
            out += rate
            if kind == ROOT_REINFECTION:
                reward[k] += rate
            j = index.get(_target(s, kind, params.variant))
            if j is not None:
                rows.append(k)
                cols.append(j)
                vals.append(-rate)
        rows.append(k)
        cols.append(k)
        vals.append(out)
    a = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(m, m))
    rhs = np.column_stack([np.ones(m), reward])
    if m <= _DENSE_LIMIT:
        sol = scipy.linalg.lu_solve(scipy.linalg.lu_factor(a.toarray()), rhs)
    else:
        lu = scipy.sparse.linalg.splu(a)
        sol = lu.solve(rhs)
    pos = {s: j for j, s in enumerate(states)}
    times = np.zeros(len(states))
    psi = np.zeros(len(states))
    for k, s in enumerate(transient):
        times[pos[s]], psi[pos[s]] = sol[k]
    return OracleSolution(params, states, times, psi)

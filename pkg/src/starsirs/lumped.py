"""Event-driven engine for the lumped star chain.

By exchangeability of the leaves the triple (root state, #infected leaves,
#recovered leaves) is Markov, so one event costs O(1): an exponential gap
at the total exit rate followed by a categorical choice of transition.
Rounds are recorded online as the root changes state.
"""
from __future__ import annotations

import numpy as np
from numba import njit

S, I, R = 0, 1, 2
VX, VY, VSIS = 0, 1, 2

# kernel status codes
EXTINCT, CENSORED, REINFECTED = 0, 1, 2


@njit(cache=True)
def _step(rng, root, i, r, n, lam, alpha, variant):
    """Draw one transition. Returns (gap, root, i, r, root_changed)."""
    if root == I:
        r_root = 1.0
        r_inf = lam * (n - i - r)
    elif root == R:
        r_root = alpha
        r_inf = 0.0
    else:
        r_root = lam * i
        r_inf = 0.0
    r_rec = float(i)
    r_deimm = alpha * r
    total = r_root + r_inf + r_rec + r_deimm
    gap = rng.standard_exponential() / total
    u = rng.random() * total
    if u < r_root:
        if root == I:
            root = S if variant == VSIS else R
        elif root == R:
            root = S
        else:
            root = I
        return gap, root, i, r, True
    u -= r_root
    if u < r_inf:
        return gap, root, i + 1, r, False
    u -= r_inf
    if u < r_rec or r_deimm == 0.0:
        if variant == VX:
            return gap, root, i - 1, r + 1, False
        return gap, root, i - 1, r, False
    return gap, root, i, r - 1, False


@njit(cache=True)
def run_kernel(rng, n, lam, alpha, variant, horizon, root, i, r,
               stop_at_reinfection, rec_t, rec_n, log_t, log_s):
    """Simulate from (root, i, r) at time 0 until extinction or horizon.

    The initial state must have the root infected (a round starts at 0)
    unless ``stop_at_reinfection`` is set, in which case the run stops at the first
    root reinfection.  ``rec_t[k] = (tau_k, tau_k^R, tau_k^S)`` and
    ``rec_n[k] = (I_k, I_k^R, I_k^S)`` for rounds that fit in the arrays;
    ``log_t``/``log_s`` receive the post-transition trajectory if non-empty.

    Returns (time, rounds, events, min_non_immune, status, n_logged).
    """
    cap = rec_t.shape[0]
    logcap = log_t.shape[0]
    t = 0.0
    events = 0
    min_ni = n - r
    rounds = 0
    nlog = 0
    if logcap > 0:
        log_t[0] = 0.0
        log_s[0, 0] = root
        log_s[0, 1] = i
        log_s[0, 2] = r
        nlog = 1
    if root == I:
        rounds = 1
        if cap > 0:
            rec_t[0, 0] = 0.0
            rec_t[0, 1] = np.nan
            rec_t[0, 2] = np.nan
            rec_n[0, 0] = i
    while True:
        if i == 0 and root != I:
            status = EXTINCT
            break
        gap, nroot, i, r, changed = _step(rng, root, i, r, n, lam, alpha, variant)
        t += gap
        if t > horizon:
            t = horizon
            status = CENSORED
            break
        events += 1
        if n - r < min_ni:
            min_ni = n - r
        if logcap > 0 and nlog < logcap:
            log_t[nlog] = t
            log_s[nlog, 0] = nroot
            log_s[nlog, 1] = i
            log_s[nlog, 2] = r
            nlog += 1
        if changed:
            k = rounds - 1
            if nroot == I:
                if stop_at_reinfection:
                    root = nroot
                    status = REINFECTED
                    break
                rounds += 1
                if rounds - 1 < cap:
                    rec_t[rounds - 1, 0] = t
                    rec_t[rounds - 1, 1] = np.nan
                    rec_t[rounds - 1, 2] = np.nan
                    rec_n[rounds - 1, 0] = i
            elif root == I:
                if 0 <= k < cap:
                    rec_t[k, 1] = t
                    rec_n[k, 1] = i
                    if nroot == S:
                        rec_t[k, 2] = t
                        rec_n[k, 2] = i
            elif 0 <= k < cap:
                rec_t[k, 2] = t
                rec_n[k, 2] = i
            root = nroot
    if status == EXTINCT and rounds > 0 and rounds - 1 < cap:
        k = rounds - 1
        if root == R:
            # root's immunity outlives the infection; its end is still drawn
            rec_t[k, 2] = rec_t[k, 1] + rng.standard_exponential() / alpha
            rec_n[k, 2] = 0
    return t, rounds, events, min_ni, status, nlog


@njit(cache=True)
def failure_trials(rng, a, lam, alpha, variant, trials):
    """Count failed rounds among ``trials`` runs started at the root's recovery.

    Each trial starts with the root just recovered and ``a`` infected leaves
    and stops at the root's reinfection (success) or at extinction (failure).
    Susceptible leaves play no role until the root is reinfected, so they
    are not represented.
    """
    fails = 0
    root0 = S if variant == VSIS else R
    for _ in range(trials):
        root = root0
        i = a
        r = 0
        while True:
            if i == 0 and root != I:
                fails += 1
                break
            _, root, i, r, changed = _step(rng, root, i, r, a, lam, alpha, variant)
            if changed and root == I:
                break
    return fails

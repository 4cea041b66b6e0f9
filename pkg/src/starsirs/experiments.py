"""Monte Carlo harness: grids of survival runs, exponent fits and audits.

Replica ``k`` of grid point ``p`` always uses stream ``(master_seed, (p,
k))``, and per-point statistics are reduced in replica order, so results
do not depend on the number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import lumped
from .analytics import conditional_reinfection_gap_mean, prop_s_constant, round_failure_prob
from .core import DEFAULT_HORIZON, Engine, run_survival
from .couplings import ConsistencyError, run_coupled_xy
from .model import ProcessParams, Variant
from .rng import SeedSpec, derive_stream

# share of censored replicas above which a grid point is flagged
CENSOR_LIMIT = 0.01
# replicas handed to a worker at a time
_CHUNK = 2000

AUDITS = ("coupling", "floor", "residual", "reinfection_gap", "engines")
FIT_MODES = ("vary_lambda_fixed_n", "vary_n_fixed_lambda")


class InsufficientRangeError(ValueError):
    """Too few grid points survive the dominance filter for a fit."""


class EngineDivergenceError(RuntimeError):
    """The two engines disagree beyond the agreed tolerance."""


@dataclass(frozen=True)
class ExperimentSpec:
    grid: tuple[ProcessParams, ...]
    replicas: int
    master_seed: int = 0
    engine: Engine = Engine.LUMPED
    horizon: float = DEFAULT_HORIZON
    audits: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "engine", Engine(self.engine))
        object.__setattr__(self, "audits", frozenset(self.audits))
        if not self.grid:
            raise ValueError("grid must not be empty")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ValueError("replicas must be a positive integer")
        unknown = self.audits - set(AUDITS)
        if unknown:
            raise ValueError(f"unknown audits: {sorted(unknown)}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def seed(self, point: int, replica: int) -> SeedSpec:
        return SeedSpec(self.master_seed, (point, replica))


@dataclass(frozen=True)
class PointResult:
    n: int
    lam: float
    alpha: float
    variant: str
    replicas: int
    censored: int
    mean_tau: float
    var_tau: float
    se_tau: float
    ci_low: float
    ci_high: float
    mean_psi: float
    mean_events: float
    min_non_immune_fraction: float
    unreliable: bool

    @property
    def params(self) -> ProcessParams:
        return ProcessParams(self.n, self.lam, self.alpha, self.variant)


POINT_COLUMNS = ("n", "lambda", "alpha", "variant", "replicas", "censored", "mean_tau",
                 "var_tau", "se_tau", "ci_low", "ci_high", "mean_psi", "mean_events",
                 "min_non_immune_fraction", "unreliable")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    points: list[PointResult]
    samples: list[dict[str, np.ndarray]] = field(default_factory=list, repr=False)
    fit: dict | None = None
    audits: dict = field(default_factory=dict)

    def rows(self) -> list[list]:
        out = []
        for p in self.points:
            d = asdict(p)
            d["lambda"] = d.pop("lam")
            out.append([d[c] for c in POINT_COLUMNS])
        return out


def summarize(params: ProcessParams, arrays: dict[str, np.ndarray]) -> PointResult:
    """Mean, variance, standard error and 95% normal CI of uncensored survival times."""
    cens = arrays["censored"]
    tau = arrays["tau"][~cens]
    m = tau.size
    mean = float(tau.mean()) if m else math.nan
    var = float(tau.var(ddof=1)) if m > 1 else math.nan
    se = math.sqrt(var / m) if m > 1 else math.nan
    half = 1.959963984540054 * se
    return PointResult(
        params.n, params.lam, params.alpha, params.variant.value, int(arrays["tau"].size),
        int(cens.sum()), mean, var, se, mean - half, mean + half,
        float(arrays["psi"][~cens].mean()) if m else math.nan,
        float(arrays["events"].mean()),
        float(arrays["min_non_immune_fraction"].min()),
        bool(cens.sum() > CENSOR_LIMIT * cens.size),
    )


def _run_chunk(args):
    params, master, point, start, count, engine, horizon = args
    out = {k: [] for k in ("tau", "psi", "events", "censored", "min_non_immune_fraction")}
    for k in range(start, start + count):
        s, _ = run_survival(params, SeedSpec(master, (point, k)), engine, horizon, record=False)
        out["tau"].append(s.tau)
        out["psi"].append(s.psi)
        out["events"].append(s.events)
        out["censored"].append(s.censored)
        out["min_non_immune_fraction"].append(s.min_non_immune_fraction)
    return point, start, out


def _collect(spec: ExperimentSpec, workers: int):
    jobs = []
    for p, params in enumerate(spec.grid):
        for start in range(0, spec.replicas, _CHUNK):
            count = min(_CHUNK, spec.replicas - start)
            jobs.append((params, spec.master_seed, p, start, count, spec.engine.value, spec.horizon))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    # fixed reduction order: by point, then by replica index
    results.sort(key=lambda r: (r[0], r[1]))
    per_point = []
    for p in range(len(spec.grid)):
        parts = [r[2] for r in results if r[0] == p]
        arrays = {
            "tau": np.array([x for part in parts for x in part["tau"]], dtype=float),
            "psi": np.array([x for part in parts for x in part["psi"]], dtype=np.int64),
            "events": np.array([x for part in parts for x in part["events"]], dtype=np.int64),
            "censored": np.array([x for part in parts for x in part["censored"]], dtype=bool),
            "min_non_immune_fraction": np.array(
                [x for part in parts for x in part["min_non_immune_fraction"]], dtype=float),
        }
        per_point.append(arrays)
    return per_point


def run_grid(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Simulate every grid point and aggregate.

    Points with more than 1% censored replicas are flagged ``unreliable``;
    censored replicas never enter the means.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    samples = _collect(spec, workers)
    points = [summarize(params, arr) for params, arr in zip(spec.grid, samples)]
    return ExperimentResult(spec, points, samples)


# -- exponent fits ---------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    used: tuple[int, ...]

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared, "points_used": list(self.used)}


def dominance_ok(params: ProcessParams, min_dominance: float = 10.0) -> bool:
    """Whether ``(lam^2 n)^alpha >= min_dominance * log n``."""
    n = params.n
    if n < 2:
        return False
    return (params.lam ** 2 * n) ** params.alpha >= min_dominance * math.log(n)


def fit_exponent(result: ExperimentResult, mode: str = "vary_lambda_fixed_n",
                 min_dominance: float = 10.0) -> FitResult:
    """Least-squares slope of log mean survival against ``log(lam^2 n)``.

    Only points with ``(lam^2 n)^alpha >= min_dominance * log n`` are used.
    In ``vary_n_fixed_lambda`` mode the slope equals the one against
    ``log n`` since ``lam`` is constant.
    """
    if mode not in FIT_MODES:
        raise ValueError(f"mode must be one of {FIT_MODES}")
    pts = result.points
    fixed = {p.n for p in pts} if mode == "vary_lambda_fixed_n" else {p.lam for p in pts}
    if len(fixed) != 1:
        raise ValueError(f"grid is not of the form required by {mode}")
    used = [k for k, p in enumerate(pts)
            if dominance_ok(p.params, min_dominance) and np.isfinite(p.mean_tau) and p.mean_tau > 0]
    if len(used) < 3:
        raise InsufficientRangeError(
            f"only {len(used)} grid points pass the dominance filter; need 3")
    x = np.array([math.log(pts[k].lam ** 2 * pts[k].n) for k in used])
    y = np.array([math.log(pts[k].mean_tau) for k in used])
    reg = stats.linregress(x, y)
    return FitResult(float(reg.slope), float(reg.intercept), float(reg.rvalue ** 2), tuple(used))


def scaling_reference(params: ProcessParams) -> float:
    """``(lam^2 n)^alpha / (lam + 1)^(2 alpha) + log n``."""
    n, lam, a = params.n, params.lam, params.alpha
    return (lam * lam * n) ** a / (lam + 1.0) ** (2 * a) + math.log(n)


def band_ratio(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.max() / values.min())


# -- conditional round failure --------------------------------------------------

@dataclass(frozen=True)
class FailureEstimate:
    a: int
    lam: float
    alpha: float
    trials: int
    failures: int
    frequency: float
    ci_low: float
    ci_high: float
    exact: float

    @property
    def covers_exact(self) -> bool:
        return self.ci_low <= self.exact <= self.ci_high


def wilson_interval(successes: int, trials: int, level: float = 0.99) -> tuple[float, float]:
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


def empirical_round_failure(a: int, lam: float, alpha: float, trials: int, seed: SeedSpec,
                            variant: Variant | str = Variant.X) -> FailureEstimate:
    """Failure frequency of rounds started at the root's recovery with ``a`` infected leaves.

    Each trial runs from (root recovered, ``a`` infected leaves) until a
    leaf reinfects the root or the infection dies out.  The interval is
    the 99% Wilson interval.
    """
    variant = Variant.parse(variant)
    if int(a) != a or a < 1:
        raise ValueError("a must be a positive integer")
    if trials < 1:
        raise ValueError("trials must be positive")
    ProcessParams(a, lam, alpha, variant)
    if variant is Variant.SIS:
        exact = (1.0 + lam) ** (-a)
    else:
        exact = round_failure_prob(a, lam, alpha)
    fails = lumped.failure_trials(derive_stream(seed), int(a), float(lam), float(alpha),
                                  variant.code, int(trials))
    lo, hi = wilson_interval(fails, trials)
    return FailureEstimate(int(a), float(lam), float(alpha), int(trials), int(fails),
                           fails / trials, lo, hi, exact)


# -- audits ------------------------------------------------------------------------

@dataclass
class AuditResult:
    name: str
    pass_rate: float
    checked: int
    passed: bool
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"audit": self.name, "pass_rate": self.pass_rate, "checked": self.checked,
                "passed": self.passed, **self.details}


def audit_floor(spec: ExperimentSpec, workers: int = 1, required: float | None = None,
                result: ExperimentResult | None = None) -> list[AuditResult]:
    """Share of replicas whose non-immune fraction never drops below the floor constant.

    ``required`` turns the report into a check; without it the audit only
    reports (small ``n`` is outside the asymptotic regime).
    """
    if result is None:
        result = run_grid(spec, workers)
    out = []
    for params, arr in zip(spec.grid, result.samples):
        floor = prop_s_constant(params.alpha)
        rate = float(np.mean(arr["min_non_immune_fraction"] >= floor))
        ok = True if required is None else rate >= required
        out.append(AuditResult("floor", rate, int(arr["tau"].size), ok,
                               {"n": params.n, "lambda": params.lam, "alpha": params.alpha,
                                "variant": params.variant.value, "floor": floor}))
    return out


def audit_coupling(spec: ExperimentSpec, raise_on_failure: bool = True,
                   sink=None) -> list[AuditResult]:
    """Run coupled X/Y pairs for every replica seed and report the pass rate.

    Anything below 1.0 means the implementation is broken and raises
    :class:`ConsistencyError` unless ``raise_on_failure`` is false.  One
    JSON line per seed is written to ``sink`` if given.
    """
    out = []
    for p, params in enumerate(spec.grid):
        good = 0
        rounds = 0
        for k in range(spec.replicas):
            seed = spec.seed(p, k)
            run = run_coupled_xy(params, seed, horizon=spec.horizon, strict=False)
            good += run.ok
            rounds += len(run.recovery_counts)
            if sink is not None:
                sink.write(run.json_line(seed) + "\n")
        rate = good / spec.replicas
        res = AuditResult("coupling", rate, spec.replicas, rate == 1.0,
                          {"n": params.n, "lambda": params.lam, "alpha": params.alpha,
                           "rounds_audited": rounds})
        out.append(res)
        if raise_on_failure and not res.passed:
            raise ConsistencyError(f"coupling pass rate {rate} < 1 at {params}")
    return out


@dataclass(frozen=True)
class EngineComparison:
    mean_lumped: float
    mean_general: float
    z: float
    ks: float
    ks_critical: float

    @property
    def agree(self) -> bool:
        return self.z <= 4.0 and self.ks < self.ks_critical

    def as_dict(self) -> dict:
        return {**asdict(self), "agree": self.agree}


def ks_critical(n: int, m: int, level: float = 0.001) -> float:
    """Asymptotic two-sample KS critical value."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def compare_engines(spec: ExperimentSpec, raise_on_failure: bool = True) -> list[EngineComparison]:
    """Two-sample z and KS statistics on survival times, lumped versus per-vertex.

    The per-vertex replicas use replica indices ``replicas..2*replicas-1``
    so the two samples come from disjoint streams.
    """
    out = []
    for p, params in enumerate(spec.grid):
        a = np.array([run_survival(params, spec.seed(p, k), Engine.LUMPED, spec.horizon,
                                   record=False)[0].tau for k in range(spec.replicas)])
        b = np.array([run_survival(params, spec.seed(p, spec.replicas + k), Engine.GENERAL,
                                   spec.horizon)[0].tau for k in range(spec.replicas)])
        pooled = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size) if a.size > 1 else 0.0
        diff = abs(a.mean() - b.mean())
        z = diff / pooled if pooled > 0 else (0.0 if diff == 0 else math.inf)
        ks = float(stats.ks_2samp(a, b).statistic)
        cmp = EngineComparison(float(a.mean()), float(b.mean()), float(z), ks,
                               ks_critical(a.size, b.size))
        out.append(cmp)
        if raise_on_failure and not cmp.agree:
            raise EngineDivergenceError(f"engines disagree at {params}: {cmp}")
    return out


def residual_audit(params: ProcessParams, runs: int, seed: SeedSpec) -> AuditResult:
    """Mean of ``(tau - tau_S) 1{tau > tau_S}`` over the failed (final) round of each run.

    The check is that this mean stays below ``2 log n``.
    """
    vals = np.empty(runs)
    for k in range(runs):
        s, recs = run_survival(params, seed.child(k), Engine.LUMPED)
        last = recs[-1]
        vals[k] = s.tau - last.tau_i_S if s.tau > last.tau_i_S else 0.0
    mean = float(vals.mean())
    limit = 2.0 * math.log(params.n)
    return AuditResult("residual", mean, runs, mean <= limit,
                       {"n": params.n, "lambda": params.lam, "alpha": params.alpha,
                        "mean_residual": mean, "limit": limit,
                        "se": float(vals.std(ddof=1) / math.sqrt(runs))})


def reinfection_gaps(b: int, lam: float, samples: int, seed: SeedSpec) -> np.ndarray:
    """Gaps from the end of the root's immunity to its reinfection, given success.

    Trials start with the root susceptible and ``b`` infected leaves;
    those ending in extinction are discarded until ``samples`` gaps exist.
    """
    rng = derive_stream(seed)
    out = np.empty(samples)
    got = 0
    e0 = np.empty(0)
    rt = np.empty((0, 3))
    rn = np.empty((0, 3), dtype=np.int64)
    ls = np.empty((0, 3), dtype=np.int64)
    while got < samples:
        t, _, _, _, status, _ = lumped.run_kernel(rng, b, lam, 1.0, lumped.VY, math.inf,
                                                  lumped.S, b, 0, True, rt, rn, e0, ls)
        if status == lumped.REINFECTED:
            out[got] = t
            got += 1
    return out


def reinfection_gap_audit(b: int, lam: float, samples: int, seed: SeedSpec) -> AuditResult:
    """Audit the law of successful reinfection gaps started from ``b`` infected leaves.

    Passes when the gaps stochastically dominate Exp((lam+1) b) (one-sided
    KS at level 0.001) and their mean is within 4 SE of the exact
    conditional mean.  ``interval_ok`` additionally reports whether the
    mean lies in ``[1/((lam+1) b), 1/(lam b)]`` (4 SE allowance); that
    interval does not hold for every ``b``, so it is reported, not required.
    """
    gaps = reinfection_gaps(b, lam, samples, seed)
    rate = (lam + 1.0) * b
    xs = np.sort(gaps)
    ecdf = np.arange(1, xs.size + 1) / xs.size
    excess = float(np.max(ecdf - (1.0 - np.exp(-rate * xs))))
    crit = math.sqrt(-0.5 * math.log(0.001)) / math.sqrt(xs.size)
    mean = float(gaps.mean())
    se = float(gaps.std(ddof=1) / math.sqrt(xs.size))
    exact = conditional_reinfection_gap_mean(b, lam)
    lo, hi = 1.0 / rate, 1.0 / (lam * b)
    ok = excess < crit and abs(mean - exact) <= 4 * se
    return AuditResult("reinfection_gap", 1.0 if ok else 0.0, samples, ok,
                       {"b": b, "lambda": lam, "mean_gap": mean, "se": se,
                        "exact_mean": exact, "lower": lo, "upper": hi,
                        "interval_ok": lo - 4 * se <= mean <= hi + 4 * se,
                        "dominance_excess": excess, "dominance_critical": crit})

"""Exit criteria of the build, each reported as one PASS/FAIL line."""
import hashlib
import itertools
import json
import math
import time

import pytest

from starsirs.analytics import exact_mean_survival, gautschi_series, immunity_survival_pmf
from starsirs.cli import main
from starsirs.core import run_replicas, survival_arrays
from starsirs.experiments import (ExperimentSpec, audit_coupling, audit_floor, band_ratio,
                                  compare_engines, empirical_round_failure, fit_exponent,
                                  residual_audit, run_grid, scaling_reference)
from starsirs.model import ProcessParams
from starsirs.rng import SeedSpec

from oracles import quad_pmf

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def test_oracle_equivalence(criterion):
    cells = list(itertools.product([1, 2, 5], [0.5, 1.0], [0.5, 1.0, 2.0], ["x", "y", "sis"]))
    bad = []
    worst_z = 0.0
    slowest = 0.0
    for k, (n, lam, alpha, variant) in enumerate(cells):
        p = ProcessParams(n, lam, alpha, variant)
        start = time.perf_counter()
        tau = survival_arrays(run_replicas(p, SeedSpec(101, (k,)), 100_000))["tau"]
        elapsed = time.perf_counter() - start
        slowest = max(slowest, elapsed)
        z = abs(tau.mean() - exact_mean_survival(p).mean_survival) / (tau.std(ddof=1) / math.sqrt(tau.size))
        worst_z = max(worst_z, z)
        if z >= 4 or elapsed >= 60:
            bad.append((n, lam, alpha, variant, round(z, 2), round(elapsed, 1)))
    criterion(1, "oracle equivalence", not bad,
              f"{len(cells)} cells, max z {worst_z:.2f}, slowest cell {slowest:.1f}s, failing {bad}")


def test_round_failure_closed_forms(criterion):
    start = time.perf_counter()
    worst = 0.0
    for alpha in (0.5, 1.0, 2.0):
        for a in range(1, 51):
            t = immunity_survival_pmf(a, alpha)
            worst = max(worst, max(abs(t[b] - quad_pmf(a, b, alpha)) for b in range(a + 1)))
    missed = []
    cells = list(itertools.product([1, 5, 20, 100], [0.1, 0.5], [0.5, 1.0, 2.0]))
    for k, (a, lam, alpha) in enumerate(cells):
        est = empirical_round_failure(a, lam, alpha, 100_000, SeedSpec(102, (k,)))
        if not est.covers_exact:
            missed.append((a, lam, alpha, est.frequency, est.exact))
    elapsed = time.perf_counter() - start
    criterion(2, "immunity pmf and round failure", worst < 1e-8 and not missed and elapsed < 600,
              f"max quadrature error {worst:.1e}, {len(cells) - len(missed)}/{len(cells)} "
              f"intervals cover, {elapsed:.0f}s")


def _scaling(variant, seed):
    grid = [ProcessParams(10_000, lam, 1.0, variant) for lam in (0.045, 0.09, 0.18)]
    start = time.perf_counter()
    res = run_grid(ExperimentSpec(grid, 500, master_seed=seed))
    elapsed = time.perf_counter() - start
    # the dominance filter would keep only the largest lambda; see the README
    fit = fit_exponent(res, "vary_lambda_fixed_n", min_dominance=0)
    band = band_ratio([pt.mean_tau / scaling_reference(pt.params) for pt in res.points])
    ok = 0.75 <= fit.slope <= 1.25 and band <= 5 and elapsed <= 1800
    ok = ok and not any(pt.unreliable for pt in res.points)
    return ok, f"slope {fit.slope:.3f}, band ratio {band:.2f}, {elapsed:.0f}s"


def test_scaling_x(criterion):
    ok, detail = _scaling("x", 103)
    criterion(3, "scaling in lambda^2 n, variant X", ok, detail)


def test_scaling_y(criterion):
    ok, detail = _scaling("y", 104)
    criterion(4, "scaling in lambda^2 n, variant Y", ok, detail)


def test_large_lambda_regime(criterion):
    grid = [ProcessParams(n, 1.0, 1.0) for n in (200, 400, 800)]
    start = time.perf_counter()
    res = run_grid(ExperimentSpec(grid, 1000, master_seed=105))
    elapsed = time.perf_counter() - start
    fit = fit_exponent(res, "vary_n_fixed_lambda", min_dominance=0)
    criterion(5, "large-lambda growth in n", 0.75 <= fit.slope <= 1.25 and elapsed <= 600,
              f"slope {fit.slope:.3f}, {elapsed:.0f}s")


def test_small_lambda_regime(criterion):
    grid = [ProcessParams(n, n ** -0.6, 1.0) for n in (1000, 10_000, 100_000)]
    start = time.perf_counter()
    res = run_grid(ExperimentSpec(grid, 1000, master_seed=106))
    elapsed = time.perf_counter() - start
    band = band_ratio([pt.mean_tau / math.log(pt.n) for pt in res.points])
    criterion(6, "small-lambda logarithmic band", band <= 4 and elapsed <= 600,
              f"band ratio {band:.2f}, {elapsed:.0f}s")


def test_coupling(criterion):
    spec = ExperimentSpec([ProcessParams(500, 0.08, 1.0)], 10_000, master_seed=107)
    start = time.perf_counter()
    res = audit_coupling(spec, raise_on_failure=False)[0]
    elapsed = time.perf_counter() - start
    criterion(7, "X/Y coupling dominance", res.pass_rate == 1.0 and elapsed <= 900,
              f"pass rate {res.pass_rate}, {res.details['rounds_audited']} rounds, {elapsed:.0f}s")


def test_floor(criterion):
    spec = ExperimentSpec([ProcessParams(10_000, 0.05, 1.0)], 1000, master_seed=108)
    start = time.perf_counter()
    res = audit_floor(spec, required=0.999)[0]
    elapsed = time.perf_counter() - start
    criterion(8, "non-immune floor", res.passed and elapsed <= 600,
              f"pass rate {res.pass_rate:.4f}, {elapsed:.0f}s")


def test_residual(criterion):
    start = time.perf_counter()
    results = [residual_audit(ProcessParams(n, 0.1, 1.0), 10_000, SeedSpec(109, (k,)))
               for k, n in enumerate((100, 1000))]
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"n={r.details['n']}: {r.pass_rate:.3f} <= {r.details['limit']:.3f}"
                       for r in results)
    criterion(9, "final-round residual", all(r.passed for r in results) and elapsed <= 600,
              f"{detail}, {elapsed:.0f}s")


def test_engine_equivalence(criterion):
    grid = [ProcessParams(100, 0.2, 1.0, "x"), ProcessParams(50, 1.0, 0.5, "y")]
    start = time.perf_counter()
    cmps = compare_engines(ExperimentSpec(grid, 20_000, master_seed=110), raise_on_failure=False)
    elapsed = time.perf_counter() - start
    detail = ", ".join(f"z {c.z:.2f} ks {c.ks:.4f}/{c.ks_critical:.4f}" for c in cmps)
    criterion(10, "lumped and per-vertex engines agree",
              all(c.agree for c in cmps) and elapsed <= 300, f"{detail}, {elapsed:.0f}s")


def test_gautschi(criterion):
    worst = 0.0
    for alpha in (1.5, 2.0, 3.7):
        for x in (0.7, 0.9):
            lhs = (1 - x) * gautschi_series(alpha, x)
            rhs = (alpha - 1) * gautschi_series(alpha - 1, x)
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
    s1 = gautschi_series(1.0, 2 / 3)
    criterion(11, "series recurrence", worst <= 1e-8 and abs(s1 - 3) <= 1e-10,
              f"max relative error {worst:.1e}, S_1(2/3) - 3 = {s1 - 3:.1e}")


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_determinism(criterion, tmp_path, capsys):
    cfg = tmp_path / "acceptance.ini"
    cfg.write_text("[oracle_cells]\nn = 1, 2, 5\nlambda = 0.5, 1\nalpha = 1\nvariant = x, y, sis\n"
                   "replicas = 2000\nseed = 112\n\n"
                   "[large_lambda]\nn = 200, 400, 800\nlambda = 1\nalpha = 1\nreplicas = 200\n"
                   "seed = 105\nfit = vary_n_fixed_lambda\nmin_dominance = 0\n")
    coupled = tmp_path / "coupled.ini"
    coupled.write_text("[coupling]\nn = 500\nlambda = 0.08\nalpha = 1\nreplicas = 300\nseed = 107\n")
    first, second, third = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    codes = [main(["sweep", str(cfg), "--out", str(first)]),
             main(["coupled", str(coupled), "--out", str(first)])]
    # replay from the recorded manifest, once with parallel workers
    manifest = json.loads((first / "manifest.json").read_text())
    replay = list(manifest["argv"])
    replay[replay.index("--out") + 1] = str(second)
    codes.append(main(replay))
    codes.append(main(["sweep", str(cfg), "--out", str(second), "--workers", "2"]))
    codes.append(main(["sweep", str(cfg), "--out", str(third), "--workers", "2"]))
    codes.append(main(["coupled", str(coupled), "--out", str(third)]))
    capsys.readouterr()
    a, b, c = _files(first), _files(second), _files(third)
    same = a == b == c and len(a) == 6
    digests = json.loads((third / "manifest.json").read_text())["outputs"]
    same = same and all(hashlib.sha256(c[name]).hexdigest() == d["sha256"]
                        for name, d in digests.items())
    criterion(12, "byte-identical reruns", same and codes == [0] * 6,
              f"{len(a)} data files compared across 3 output directories")

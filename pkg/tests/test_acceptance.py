"""Acceptance criteria, one test per criterion, at their stated tolerances.

Run with ``pytest tests/test_acceptance.py -v``; a one-line pass/fail summary
per criterion prints at module teardown.  Monte Carlo criteria (7-12) run the
full-size default configurations and take tens of minutes in total on one
core.
"""

import numpy as np
import pytest

from wignerlab import dynamics as dyn
from wignerlab import ensembles as ens
from wignerlab import momentflow as mf
from wignerlab import verify
from wignerlab.freeconv import DiagonalPotential, FreeConvolution, m_semicircle

pytestmark = pytest.mark.acceptance

_RESULTS = []


@pytest.fixture(scope="module", autouse=True)
def _summary(request):
    yield
    # emit outside fd-level capture so the block shows on green runs too
    capman = request.config.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print("\n================ acceptance summary ================")
        for line in _RESULTS:
            print(line)
        print("====================================================")


def record(num, name, ok, detail=""):
    line = f"criterion {num:2d} [{'PASS' if ok else 'FAIL'}] {name}  {detail}"
    _RESULTS.append(line)
    print("\n" + line)
    assert ok, line


def checks_pass(report, names):
    by = {c.name: c for c in report.checks}
    missing = [n for n in names if n not in by]
    assert not missing, f"missing checks: {missing}"
    bad = [f"{n}={by[n].value:.4g} (margin {by[n].margin:+.3g})"
           for n in names if not by[n].passed]
    return (not bad), "; ".join(bad) if bad else ", ".join(
        f"{n}={by[n].value:.4g}" for n in names)


def test_criterion_01_free_convolution_exactness():
    f = FreeConvolution(DiagonalPotential(np.zeros(64), "zero"), 1.0)
    z = np.linspace(-1.5, 1.5, 50) + 0.01j
    exact = 0.5 * (-z + np.sqrt(z - 2) * np.sqrt(z + 2))
    err = float(np.max(np.abs(f.solve_grid(z) - exact)))
    record(1, "free-convolution exactness", err <= 1e-12, f"max err {err:.2e}")


def test_criterion_02_profile_normalization():
    n = 2000
    t = n ** -0.4
    fc = verify.shared_free_convolution("semicircle", n, t)
    gam = fc.quantiles()
    norms = []
    for e in (-0.5, -0.25, 0.0, 0.25, 0.5):
        k = int(np.argmin(np.abs(gam - e))) + 1
        norms.append(fc.variance_profile_basis(k, 1e-3 * t).mean())
    ok = all(0.99 <= v <= 1.01 for v in norms)
    record(2, "profile normalization", ok,
           "norms " + ", ".join(f"{v:.4f}" for v in norms))


def test_criterion_03_characteristics_identity():
    z = np.linspace(-1.8, 1.8, 100) + 0.05j
    worst = 0.0
    for tau in (0.01, 0.1):
        lhs = m_semicircle(dyn.characteristic(z, tau))
        rhs = np.exp(-tau / 2.0) * m_semicircle(z)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    record(3, "characteristics identity", worst <= 1e-12, f"max err {worst:.2e}")


def test_criterion_04_detailed_balance():
    lam = ens.build_potential("semicircle", 24).entries
    space = mf.enumerate_configs(range(8, 16), 3)  # window 8, n = 3
    assert space.size == 120  # the multiset count C(8 + 3 - 1, 3)
    gen = mf.build_generator(space, lam, boundary="reflect")
    res = mf.detailed_balance_residual(gen)
    record(4, "detailed balance", res <= 1e-12,
           f"max relative defect {res:.2e} over {space.size} configs")


def test_criterion_05_generator_sanity():
    rng = np.random.default_rng(5)
    worst_const = 0.0
    for trial in range(100):
        n = int(rng.integers(14, 26))
        lam = np.sort(rng.uniform(-1.5, 1.5, n))
        while np.min(np.diff(lam)) < 5e-3:
            lam = np.sort(rng.uniform(-1.5, 1.5, n))
        w0 = int(rng.integers(0, n - 8))
        space = mf.enumerate_configs(range(w0, w0 + 8), int(rng.integers(1, 3)))
        gen = mf.build_generator(space, lam, ell=int(rng.integers(2, 7)))
        c = float(rng.uniform(-2, 2))
        worst_const = max(worst_const, float(np.max(np.abs(
            gen.matrix @ gen.extend(np.full(space.size, c), reference=c)))))
        f0 = rng.uniform(-1, 1, space.size)
        # the integrator asserts the maximum principle at every step
        mf.evolve(gen, f0, 0.02, reference=0.0, assert_monotone=True)
    scale = max(1.0, gen.max_diagonal())
    record(5, "generator sanity", worst_const <= 1e-9 * scale,
           f"constants residual {worst_const:.2e}, max principle held on 100 environments")


def test_criterion_06_finite_speed():
    n = 400
    lam = ens.build_potential("semicircle", n).entries
    ell = 6
    tau = ell / (4.0 * n)  # ell = 4 N tau
    lo = (n - 200) // 2
    worst = 0.0
    for npart in (1, 2):
        space = mf.enumerate_configs(range(lo, lo + 200), npart)
        gen = mf.build_generator(space, lam, ell=ell)
        start = (n // 2,) * npart
        p = mf.transition_kernel(gen, start, tau)
        d = space.distances_from(start)
        far = float(p[:space.size][d >= 8 * ell].sum()) + float(p[-1])
        worst = max(worst, far)
    record(6, "finite speed of propagation", worst <= 1e-8,
           f"mass beyond 8*ell: {worst:.2e}")


def test_criterion_07_gaussianity():
    rep1 = verify.run_experiment("gaussianity", {})
    ok1, d1 = checks_pass(rep1, ["moment2", "moment4", "moment6"])
    rep2 = verify.run_experiment("gaussianity", {"beta": 2, "samples": 150})
    ok2, d2 = checks_pass(rep2, ["moment2", "moment4", "moment6"])
    record(7, "gaussianity of bulk overlaps", ok1 and ok2,
           f"beta=1: {d1} | beta=2: {d2}")


def test_criterion_08_cauchy_profile():
    rep = verify.run_experiment("variance-profile", {})
    ok, detail = checks_pass(rep, ["profile_rel_l2_error", "localization_span_sites"])
    record(8, "Cauchy variance profile", ok, detail)


def test_criterion_09_weak_que():
    rep = verify.run_experiment("weak-que", {})
    ok, detail = checks_pass(rep, ["exceedance_strictly_decreasing"])
    ps = [f"{c.value:.4f}" for c in rep.checks if c.name.startswith("exceedance_c1")]
    record(9, "weak quantum unique ergodicity", ok,
           f"P(dev>1) along ladder: {', '.join(ps)}")


def test_criterion_10_strong_que():
    rep = verify.run_experiment("strong-que", {})
    ok, detail = checks_pass(rep, ["diag_quantile_growth_lower_bound"])
    record(10, "strong quantum unique ergodicity", ok, detail)


def test_criterion_11_local_law_rates():
    rep = verify.run_experiment("local-laws", {})
    ok, detail = checks_pass(rep, ["averaged_law_slope", "isotropic_law_slope"])
    record(11, "local-law residual rates", ok, detail)


def test_criterion_12_advection_law():
    rep = verify.run_experiment("advection", {})
    names = [c.name for c in rep.checks
             if c.name.startswith(("p99_normalized", "eta_stability"))]
    names.append("halving_under_doubling")
    ok, detail = checks_pass(rep, names)
    record(12, "advection along characteristics", ok, detail)


def test_criterion_13_exponential_identity():
    n = 6
    smp = ens.diagonalize(ens.sample_wigner(ens.EnsembleSpec(n, 1, "goe", seed=13)))
    worst = 0.0
    for j, q0 in enumerate(np.eye(n)[:3]):
        zk = smp.projections(q0)
        lhs, rhs, bound = mf.exponential_identity(
            smp.eigenvalues, zk, 0.4 + 3.0j, t=0.3, nmax=8)
        worst = max(worst, abs(lhs - rhs) - bound)
    record(13, "exponential identity", worst <= 1e-12,
           f"overflow above truncation bound: {worst:.2e}")


def test_criterion_14_kernel_stochasticity():
    worst = 0.0
    for x in (-1.2, -0.5, 0.0, 0.3, 0.9):
        for t in (0.5, 1.0):
            worst = max(worst, abs(mf.kernel_mass(x, t, 2000) - 1.0))
    record(14, "kernel stochasticity", worst <= 1e-6,
           f"worst mass defect {worst:.2e} over 10 (x, t) pairs")

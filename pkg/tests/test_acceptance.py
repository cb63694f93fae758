"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line per criterion.

Deterministic criteria run first (quadrature/closed forms, hard gates), then
the Monte Carlo pass-tier (3-SE gates at fixed seeds), then the trend tier.
Replicate batches are session-scoped and shared across criteria. Runs on 2
workers; the full module takes roughly half an hour on a 2-core box.

Known red: the degree-30 partial sum of the convolution-square generating
series at theta = 0.2 differs from the closed form by 3.496e-6 (exact rational
arithmetic), so its stated 1e-6 gate cannot pass; see the decisions ledger.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest
import scipy.integrate as si
from scipy import stats as sstats

from sbmlab import cumulants, kernels, localtime, pde, radial
from sbmlab.constants import (LOG_COEF_D2, POLE_COEF_D3, VARIANCE_SLOPE_D3,
                              gaussian_normalizer)
from sbmlab.experiments import variance_regression, z_score
from sbmlab.kernels import KernelDescriptor
from sbmlab.localtime import AtomicMeasure, mollified_kernel_id
from sbmlab.particles import (SimConfig, functional_at, occupation_integral,
                              run_replicates, survival_probability)

WORKERS = 2
EPS_SWEEP = (0.1, 0.05, 0.02, 0.01)
BUILD_TIMES = {}


def criterion(name: str, ok: bool, detail: str = ""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


def _timed(name, builder):
    t0 = time.time()
    out = builder()
    BUILD_TIMES[name] = time.time() - t0
    return out


# ---------------------------------------------------------------------------
# shared Monte Carlo batches
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def batch_survival():
    cfg = SimConfig(dim=3, n_init=2000, t_max=2.0, seed=101,
                    report_times=(0.5, 1.0, 2.0), functional_stride=4)
    return _timed("survival", lambda: run_replicates(cfg, {}, 400, workers=WORKERS))


def _d3_registry():
    reg = {"one": KernelDescriptor("CONST", param=1.0, dim=3),
           "occ_phi": KernelDescriptor("PHI", center=(0.5, 0, 0), dim=3),
           "tk_lt": KernelDescriptor("MOLLIFIED", center=(0.4, 0, 0), param=0.01, dim=3),
           "tk_phi": KernelDescriptor("PHI", center=(0.4, 0, 0), dim=3),
           "tk_logk": KernelDescriptor("LOGK", center=(0.4, 0, 0), dim=3),
           "tk_invsq": KernelDescriptor("INVSQ", center=(0.4, 0, 0), dim=3)}
    for eps in EPS_SWEEP:
        reg[mollified_kernel_id(0.3, eps)] = KernelDescriptor(
            "MOLLIFIED", center=(0.3, 0, 0), param=eps, dim=3)
    for lv in (0.1, 0.03, 0.01):
        reg[f"qv{lv}"] = KernelDescriptor("INVSQ", center=(lv, 0, 0), dim=3)
    return reg


@pytest.fixture(scope="session")
def batch_d3():
    cfg = SimConfig(dim=3, n_init=2000, t_max=1.0, seed=103,
                    report_times=(0.5, 1.0), functional_stride=2)
    return _timed("d3", lambda: run_replicates(cfg, _d3_registry(), 400,
                                               workers=WORKERS))


def _d2_registry():
    reg = {"tk_lt": KernelDescriptor("MOLLIFIED", center=(0.4, 0), param=0.01, dim=2),
           "tk_logk": KernelDescriptor("LOGK", center=(0.4, 0), dim=2)}
    for eps in EPS_SWEEP:
        reg[mollified_kernel_id(0.3, eps)] = KernelDescriptor(
            "MOLLIFIED", center=(0.3, 0), param=eps, dim=2)
    for x in (0.2, 0.1, 0.05):
        reg[f"st{x}"] = KernelDescriptor("MOLLIFIED", center=(x, 0),
                                         param=(x / 4) ** 2, dim=2)
    return reg


@pytest.fixture(scope="session")
def batch_d2():
    cfg = SimConfig(dim=2, n_init=2000, t_max=1.0, seed=105,
                    report_times=(1.0,), functional_stride=2)
    return _timed("d2", lambda: run_replicates(cfg, _d2_registry(), 400,
                                               workers=WORKERS))


@pytest.fixture(scope="session")
def batch_ext():
    reg = {}
    for x in (0.2, 0.1, 0.05, 0.02):
        reg[mollified_kernel_id(x, x * x)] = KernelDescriptor(
            "MOLLIFIED", center=(x, 0, 0), param=x * x, dim=3)
    for x in (0.5, 0.3):
        reg[mollified_kernel_id(x, (x / 4) ** 2)] = KernelDescriptor(
            "MOLLIFIED", center=(x, 0, 0), param=(x / 4) ** 2, dim=3)
    cfg = SimConfig(dim=3, n_init=800, t_max=None, t_cap=25.0, seed=107,
                    functional_stride=4)
    return _timed("ext", lambda: run_replicates(cfg, reg, 200, workers=WORKERS))


@pytest.fixture(scope="session")
def batch_rate():
    xs = [2.0 ** -n for n in (1, 2, 3, 4)]
    reg = {mollified_kernel_id(x, (x / 4) ** 2): KernelDescriptor(
        "MOLLIFIED", center=(x, 0, 0), param=(x / 4) ** 2, dim=3) for x in xs}
    cfg = SimConfig(dim=3, n_init=2000, t_max=1.0, seed=109,
                    report_times=(1.0,), functional_stride=2)
    return xs, _timed("rate", lambda: run_replicates(cfg, reg, 120,
                                                     workers=WORKERS))


@pytest.fixture(scope="session")
def batch_bad_point():
    xs = [2.0 ** -n for n in (1, 2, 3, 4)]
    reg = {mollified_kernel_id(x, (x / 4) ** 2): KernelDescriptor(
        "MOLLIFIED", center=(x, 0, 0), param=(x / 4) ** 2, dim=3) for x in xs}
    cfg = SimConfig(dim=3, n_init=2000, t_max=1.0, seed=111,
                    report_times=(1.0,), functional_stride=2,
                    initial_measure=((0.5, (0.0, 0.0, 0.0)), (0.5, (1.0, 0.0, 0.0))))
    return xs, _timed("bad_point", lambda: run_replicates(cfg, reg, 120,
                                                          workers=WORKERS))


# ---------------------------------------------------------------------------
# deterministic hard gates
# ---------------------------------------------------------------------------

class TestDeterministic:
    def test_mean_identities(self):
        t0 = time.time()
        worst = 0.0
        for dim, t, xn in ((3, 1.0, 0.5), (3, 1.0, 0.1), (2, 1.0, 0.3), (2, 0.5, 0.1)):
            res = kernels.verify_mean_identities(dim, t, (xn,) + (0.0,) * (dim - 1))
            worst = max(worst, max(abs(v) for v in res.values()))
        elapsed = time.time() - t0
        criterion("mean identities < 1e-6 at the 4 stated points",
                  worst < 1e-6 and elapsed < 30.0,
                  f"worst residual {worst:.2e}, {elapsed:.1f}s")

    def test_kernel_inequality_suite(self):
        t0 = time.time()
        checks = kernels.verify_kernel_bounds(3, [0.05, 0.1, 0.3, 0.7, 1.5],
                                              [0.1, 0.5, 1.0, 2.0, 5.0],
                                              [0.5, 1.0, 1.5])
        ok = all(c.passed for c in checks)
        centered = kernels.inv_distance_time_integral(1.0, 0.0)
        ok &= abs(centered - 1.5957691216057308) < 1e-9
        ok &= centered <= 1.7320508075688772
        elapsed = time.time() - t0
        criterion("kernel inequality suite on the 5x5x3 grid",
                  ok and elapsed < 60.0,
                  f"{len(checks)} checks, centered value {centered:.6f}, {elapsed:.1f}s")

    def test_catalan_exact(self):
        ok = all(cumulants.catalan_c(n) == math.comb(2 * n - 2, n - 1) // n
                 for n in range(1, 21))
        criterion("convolution-square sequence equals Catalan(n-1), n <= 20", ok)

    def test_partial_sum_gate_as_stated(self):
        # stated gate: |sum_{n<=30} c_n 0.2^n - F(0.2)| < 1e-6. The exact gap
        # (rational arithmetic, verified below in test_partial_sum_exact_gap)
        # is 3.496e-6, so this criterion is analytically unattainable; it is
        # kept verbatim and red. See the decisions ledger.
        gap = abs(cumulants.gen_function_partial_sum(0.2, 30)
                  - cumulants.gen_function_F(0.2))
        criterion("partial sum (n<=30) within 1e-6 of the closed form",
                  gap < 1e-6,
                  f"gap {gap:.3e}; exact tail of the series at n=30 is 3.496e-6, "
                  "first below 1e-6 at n_max=35")

    def test_partial_sum_exact_gap(self):
        # independent oracle: exact rational partial sum
        exact = sum(Fraction(cumulants.catalan_c(n)) * Fraction(1, 5) ** n
                    for n in range(1, 31))
        gap = abs(float(exact) - cumulants.gen_function_F(0.2))
        impl_gap = abs(cumulants.gen_function_partial_sum(0.2, 30)
                       - cumulants.gen_function_F(0.2))
        ok = abs(impl_gap - gap) < 1e-12 and \
            abs(cumulants.gen_function_partial_sum(0.2, 35)
                - cumulants.gen_function_F(0.2)) < 1e-6
        criterion("partial sums match exact arithmetic and converge",
                  ok, f"exact gap at 30: {gap:.4e}")

    def test_const_kernel_closed_forms(self):
        t = 1.0
        tab = cumulants.v_recursion(KernelDescriptor("CONST", param=1.0, dim=3),
                                    t, n_max=3)
        rel2 = abs(tab.value(2, 0.0) - t**3 / 3.0) * 3.0
        rel3 = abs(tab.value(3, 0.0) - 2.0 * t**5 / 15.0) * 7.5
        criterion("constant-kernel table v2 = t^3/3, v3 = 2 t^5/15 (1e-10 rel)",
                  rel2 < 1e-10 and rel3 < 1e-10, f"rel errors {rel2:.1e}, {rel3:.1e}")

    def test_growth_bound_inverse_distance(self):
        tab = cumulants.v_recursion(
            KernelDescriptor("PHI", center=(0.3, 0, 0), dim=3), 1.0, n_max=6,
            scale=1.0 / POLE_COEF_D3)
        ok = cumulants.check_growth_bound(
            tab, cumulants.BoundConstants.inverse_distance(3)).all()
        criterion("growth bound holds pointwise for 1/|y-x|, n <= 6", bool(ok))

    def test_pde_asymptotics(self):
        t0 = time.time()
        sol = pde.solve_radial(1.0, 1e-6, 10.0, 2000)
        fo = pde.first_order_ratio(sol, 1e-5)
        ratios = [pde.second_order_ratio(sol, [r])[1][0] for r in (1e-2, 1e-3, 1e-4)]
        gaps = [abs(v + 1.0) for v in ratios]
        sol2 = pde.solve_radial(2.0, 1e-6, 10.0, 2000)
        rs = np.geomspace(1e-5, 0.2, 50)
        scaling = float(np.max(np.abs(sol2.v_at(rs) - 4.0 * sol.v_at(2.0 * rs))
                               / sol2.v_at(rs)))
        elapsed = time.time() - t0
        ok = (0.97 <= fo <= 1.03 and scaling < 5e-3
              and -1.3 <= ratios[-1] <= -0.7
              and gaps[0] > gaps[1] > gaps[2] and elapsed < 120.0)
        criterion("elliptic profile: first order, scaling, second-order bracket",
                  ok, f"fo={fo:.4f} scaling={scaling:.2e} "
                      f"ratios={[round(v, 3) for v in ratios]} {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Monte Carlo pass tier (3 SE, fixed seeds)
# ---------------------------------------------------------------------------

class TestPassTier:
    def test_mass_survival_variance(self, batch_survival):
        recs = batch_survival
        ts = (0.5, 1.0, 2.0)
        mass = np.array([r.mass for r in recs])
        zs = {}
        for j, t in enumerate(ts):
            zs[f"mass_t{t}"] = z_score(mass[:, j], 1.0)
            surv = np.array([(r.extinction_time or math.inf) > t for r in recs],
                            dtype=float)
            zs[f"surv_t{t}"] = z_score(surv, survival_probability(1.0, t))
        v = mass[:, 1]
        var = v.var(ddof=1)
        se = math.sqrt((np.mean((v - v.mean()) ** 4) - var**2) / v.size)
        zs["var_mass_t1"] = (var - 1.0) / se
        elapsed = BUILD_TIMES["survival"]
        ok = all(abs(z) <= 3.0 for z in zs.values()) and elapsed < 600.0
        criterion("mass martingale, survival law, total-mass variance (N=2000, R=400)",
                  ok, f"z={ {k: round(z, 2) for k, z in zs.items()} }, "
                      f"batch {elapsed:.0f}s")

    def test_occupation_moments(self, batch_d3):
        recs = batch_d3
        occ1 = np.array([occupation_integral(r, "one", 1.0) for r in recs])
        var1 = occ1.var(ddof=1)
        se1 = math.sqrt((np.mean((occ1 - occ1.mean()) ** 4) - var1**2) / occ1.size)
        z1 = (var1 - 1.0 / 3.0) / se1

        # independent tensor-quadrature oracle for the second moment of the
        # inverse-distance occupation integral at |x| = 0.5
        def inner(s, t=1.0):
            f = lambda rho: np.asarray(cumulants.inv_distance_v1(s, rho)) ** 2
            return radial.expect_distance(3, t - s, 0.5, f)

        v2_oracle, quad_err = si.quad(inner, 0.0, 1.0, limit=100)
        assert quad_err < 1e-7
        occ_phi = np.array([occupation_integral(r, "occ_phi", 1.0) for r in recs])
        occ_phi = occ_phi / POLE_COEF_D3              # kernel 1/|y-x|
        var2 = occ_phi.var(ddof=1)
        se2 = math.sqrt((np.mean((occ_phi - occ_phi.mean()) ** 4) - var2**2)
                        / occ_phi.size)
        z2 = (var2 - v2_oracle) / se2
        ok = abs(z1) <= 3.0 and abs(z2) <= 3.0
        criterion("occupation-integral variances vs cumulant oracles (R=400)",
                  ok, f"z(const)={z1:.2f}, z(inv-dist)={z2:.2f}")

    def test_local_time_means(self, batch_d3, batch_d2):
        zs, ok = {}, True
        for dim, recs, t in ((3, batch_d3, 1.0), (2, batch_d2, 1.0)):
            x = (0.3,) + (0.0,) * (dim - 1)
            biases = []
            for eps in EPS_SWEEP:
                kid = mollified_kernel_id(0.3, eps)
                vals = np.array([occupation_integral(r, kid, t) for r in recs])
                oracle = localtime.expected_local_time(dim, x, t, eps)
                z = z_score(vals, oracle)
                zs[f"d{dim}_eps{eps}"] = z
                ok &= abs(z) <= 3.0
                q = kernels.potential_q(dim, t, x)
                biases.append(abs(oracle - q))
            ok &= all(b > c for b, c in zip(biases, biases[1:]))
        criterion("bandwidth-eps occupation means vs smoothed potential, "
                  "monotone bias sweep",
                  ok, f"z={ {k: round(z, 2) for k, z in zs.items()} }")

    def test_tanaka_martingale_means(self, batch_d3, batch_d2):
        x = 0.4
        mart3 = np.array([localtime.tanaka_decompose(
            r, (x, 0, 0), 1.0, 3, lt_kernel="tk_lt", terminal_kernel="tk_phi",
            invsq_kernel="tk_invsq").martingale for r in batch_d3])
        z3 = z_score(mart3, 0.0)
        mart2 = np.array([localtime.tanaka_decompose(
            r, (x, 0), 1.0, 2, lt_kernel="tk_lt", terminal_kernel="tk_logk")
            .martingale for r in batch_d2])
        z2 = z_score(mart2, 0.0)
        # log-kernel decomposition, both sides at expectation level
        lhs = np.array([0.5 * occupation_integral(r, "tk_invsq", 1.0)
                        for r in batch_d3])
        rhs = kernels.expect_kernel(3, 1.0, (x, 0, 0), np.log) - math.log(x)
        zp = z_score(lhs, rhs)
        ok = abs(z3) <= 3.0 and abs(z2) <= 3.0 and abs(zp) <= 3.0
        criterion("decomposition martingale means in both dimensions",
                  ok, f"z_d3={z3:.2f}, z_d2={z2:.2f}, z_log_identity={zp:.2f}")


# ---------------------------------------------------------------------------
# trend tier
# ---------------------------------------------------------------------------

class TestTrendTier:
    def test_variance_slope_and_moment_trends(self, batch_ext):
        recs = batch_ext
        levels = (0.2, 0.1, 0.05, 0.02)
        samples, zvals = {}, {}
        for x in levels:
            kid = mollified_kernel_id(x, x * x)
            vals = np.array([occupation_integral(r, kid) for r in recs])
            samples[x] = vals
            zvals[x] = np.array([(v - POLE_COEF_D3 / x) / gaussian_normalizer(x)
                                 for v in vals])
        reg = variance_regression(samples, seed=424242)
        ratio = reg["slope"] / VARIANCE_SLOPE_D3
        skew = {x: abs(float(sstats.skew(zvals[x]))) for x in levels}
        kurt = {x: abs(float(sstats.kurtosis(zvals[x]))) for x in levels}
        shrink = skew[0.02] < skew[0.2] and kurt[0.02] < kurt[0.2]
        ok = 0.5 <= ratio <= 2.0 and shrink
        criterion("variance slope within [0.5, 2.0]x of 1/(2 pi^2); "
                  "moment trends shrinking",
                  ok, f"slope ratio {ratio:.2f} (CI [{reg['ci_lo']:.4f}, "
                      f"{reg['ci_hi']:.4f}]), skew {skew[0.2]:.2f}->{skew[0.02]:.2f}, "
                      f"kurt {kurt[0.2]:.2f}->{kurt[0.02]:.2f}")

    def test_qv_ratio_trend(self, batch_d3):
        # the expectation-level ratio trends to 1 (exact quadrature), and the
        # replicate means track it within 3 SE at every level
        ratios, exact, zs = [], [], []
        for lv in (0.1, 0.03, 0.01):
            denom = VARIANCE_SLOPE_D3 * math.log(1 / lv)
            qv = np.array([POLE_COEF_D3**2 * occupation_integral(r, f"qv{lv}", 1.0)
                           for r in batch_d3]) / denom
            ratios.append(float(qv.mean()))
            exact.append(POLE_COEF_D3**2 * radial.time_expect_distance(
                3, 1.0, lv, lambda r: r**-2.0) / denom)
            zs.append(z_score(qv, exact[-1]))
        ok = (all(a > b for a, b in zip(exact, exact[1:])) and exact[-1] > 1.0
              and all(abs(z) <= 3.0 for z in zs))
        criterion("quadratic-variation ratio trending to 1",
                  ok, f"exact {[round(v, 3) for v in exact]}, "
                      f"mc {[round(v, 3) for v in ratios]}, "
                      f"z {[round(z, 2) for z in zs]}")

    def test_d2_stabilization(self, batch_d2):
        levels = (0.2, 0.1, 0.05)
        residuals = {}
        for x in levels:
            vals = np.array([occupation_integral(r, f"st{x}", 1.0)
                             for r in batch_d2])
            residuals[x] = vals - LOG_COEF_D2 * math.log(1.0 / x)
        spreads = [float(np.std(residuals[levels[i]] - residuals[levels[i + 1]],
                                ddof=1)) for i in range(len(levels) - 1)]
        ok = spreads[1] < spreads[0]
        criterion("d=2 paired-path residual stabilization",
                  ok, f"difference spreads {[round(s, 4) for s in spreads]}")

    def test_rate_envelopes(self, batch_rate):
        xs, recs = batch_rate
        kids = [mollified_kernel_id(x, (x / 4) ** 2) for x in xs]
        fractions, env_ok, tail_ratios = {}, True, {}
        for alpha in (0.25, 0.5, 0.99):
            rep = localtime.rate_experiment(recs, alpha, xs, kids, 1.0)
            fractions[alpha] = rep.decreasing_fraction
            env_mean = rep.envelopes.mean(axis=0)
            env_ok &= bool(np.all(np.diff(env_mean) < 0))
            tail_ratios[alpha] = float(np.abs(rep.sequences).mean(axis=0)[-1]
                                       / np.abs(rep.sequences).mean(axis=0)[0])
        ordering = (tail_ratios[0.99] <= tail_ratios[0.5] <= tail_ratios[0.25])
        ok = (fractions[0.5] >= 0.8 and fractions[0.99] >= 0.8
              and env_ok and ordering)
        criterion("rate-experiment envelope decay for alpha in {0.25, 0.5, 0.99}",
                  ok, f"decreasing fractions { {a: round(f, 2) for a, f in fractions.items()} }, "
                      f"tail ratios { {a: round(v, 2) for a, v in tail_ratios.items()} }")

    def test_bad_point_blowup(self, batch_bad_point):
        xs, recs = batch_bad_point
        mu = AtomicMeasure(atoms=((0.5, (0.0, 0.0, 0.0)), (0.5, (1.0, 0.0, 0.0))))
        kids = [mollified_kernel_id(x, (x / 4) ** 2) for x in xs]
        rep = localtime.bad_point_experiment(mu, (0, 0, 0),
                                             [(x, 0.0, 0.0) for x in xs],
                                             recs, kids, 1.0)
        freq = rep.below_half_freq
        ok = bool(np.all(np.diff(freq) <= 0) and freq[-1] < freq[0])
        criterion("blow-up frequency decreasing toward the atom",
                  ok, f"freq {[round(f, 3) for f in freq]}")

    def test_laplace_crosscheck(self, batch_ext):
        recs = batch_ext
        censored = float(np.mean([r.censored for r in recs]))
        zs, ok = {}, True
        for lam in (0.5, 1.0):
            sol = pde.solve_radial(lam)
            for x in (0.5, 0.3):
                kid = mollified_kernel_id(x, (x / 4) ** 2)
                vals = np.array([occupation_integral(r, kid) for r in recs])
                row = pde.laplace_crosscheck(sol, x, vals, censored)
                zs[f"lam{lam}_x{x}"] = row.z
                ok &= abs(row.z) <= 3.0
        criterion("exponential functional vs elliptic profile (|z| <= 3)",
                  ok, f"z={ {k: round(z, 2) for k, z in zs.items()} }, "
                      f"censored {censored:.1%}")


class TestComponentIsolation:
    def test_primary_runs_without_secondary(self):
        import sys
        loaded = [m for m in sys.modules if m.startswith("sbmplots")]
        criterion("primary suite runs with the figure package absent",
                  not loaded, "no sbmplots import in the primary test run")

import math

import numpy as np
import pytest

from sbmlab import radial
from sbmlab.kernels import KernelDescriptor, SingularHitError
from sbmlab.particles import (ClusterBudgetError, ParticleCloud, SimConfig,
                              functional_at, measure_apply,
                              occupation_integral, run_replicates,
                              sample_cluster, simulate, survival_probability)

ONE = {"one": KernelDescriptor("CONST", param=1.0, dim=3)}


def small_config(**kw):
    base = dict(dim=3, n_init=300, t_max=1.0, seed=3, report_times=(0.5, 1.0))
    base.update(kw)
    return SimConfig(**base)


class TestConfig:
    def test_dt_cap_enforced(self):
        with pytest.raises(ValueError):
            SimConfig(n_init=100, dt=1.0 / 100.0)

    def test_defaults(self):
        cfg = SimConfig(n_init=200)
        assert cfg.rate == 200
        assert cfg.step == pytest.approx(1.0 / 800.0)

    def test_hash_sensitive_to_seed(self):
        a = small_config(seed=1).config_hash()
        b = small_config(seed=2).config_hash()
        assert a != b

    def test_atom_validation(self):
        with pytest.raises(ValueError):
            SimConfig(initial_measure=((0.0, (0, 0, 0)),))
        with pytest.raises(ValueError):
            SimConfig(dim=3, initial_measure=((1.0, (0, 0)),))


class TestDeterminism:
    def test_identical_config_identical_hash(self):
        cfg = small_config()
        a = simulate(cfg, ONE, replicate=4)
        b = simulate(cfg, ONE, replicate=4)
        assert a.record_hash() == b.record_hash()

    def test_replicates_differ(self):
        cfg = small_config()
        a = simulate(cfg, ONE, replicate=0)
        b = simulate(cfg, ONE, replicate=1)
        assert a.record_hash() != b.record_hash()

    def test_worker_count_invariance(self):
        cfg = small_config(t_max=0.5, report_times=(0.5,))
        seq = run_replicates(cfg, ONE, 40, workers=1)
        par = run_replicates(cfg, ONE, 40, workers=2)
        assert [r.record_hash() for r in seq] == [r.record_hash() for r in par]


@pytest.fixture(scope="module")
def batch():
    cfg = SimConfig(dim=3, n_init=400, t_max=2.0, seed=11,
                    report_times=(0.5, 1.0, 2.0), functional_stride=2)
    return run_replicates(cfg, ONE, 200, workers=2)


class TestMassCalibration:

    def test_mass_martingale(self, batch):
        mass = np.array([r.mass for r in batch])
        for j in range(3):
            se = mass[:, j].std(ddof=1) / math.sqrt(mass.shape[0])
            assert abs(mass[:, j].mean() - 1.0) <= 3.0 * se

    def test_total_mass_variance(self, batch):
        v = np.array([r.mass[1] for r in batch])
        var = v.var(ddof=1)
        se = math.sqrt((np.mean((v - v.mean()) ** 4) - var**2) / v.size)
        assert abs(var - 1.0) <= 3.0 * se

    def test_survival_law(self, batch):
        for j, t in enumerate((0.5, 1.0, 2.0)):
            surv = np.array([(r.extinction_time or math.inf) > t for r in batch],
                            dtype=float)
            target = survival_probability(1.0, t)
            se = math.sqrt(target * (1 - target) / surv.size)
            assert abs(surv.mean() - target) <= 3.0 * se

    def test_occupation_mean_and_monotone(self, batch):
        occ1 = np.array([occupation_integral(r, "one", 1.0) for r in batch])
        se = occ1.std(ddof=1) / math.sqrt(occ1.size)
        assert abs(occ1.mean() - 1.0) <= 3.0 * se
        for r in batch:
            assert np.all(np.diff(r.accumulators["one"]) >= -1e-15)

    def test_window_additivity(self, batch):
        # accumulator differences sum over disjoint windows exactly
        for r in batch[:20]:
            a = r.accumulators["one"]
            assert a[2] - a[0] == pytest.approx((a[1] - a[0]) + (a[2] - a[1]))


class TestMeasureApply:
    def test_empty_cloud(self):
        cloud = ParticleCloud(time=0.0, positions=np.zeros((0, 3)), unit_mass=0.01)
        phi = KernelDescriptor("PHI", center=(0.3, 0, 0), dim=3)
        assert measure_apply(cloud, phi) == 0.0

    def test_const_linearity(self):
        cloud = ParticleCloud(time=0.0, positions=np.zeros((7, 3)), unit_mass=0.5)
        five = KernelDescriptor("CONST", param=5.0, dim=3)
        assert measure_apply(cloud, five) == pytest.approx(5.0 * cloud.total_mass)

    def test_singular_hit_policy(self):
        cloud = ParticleCloud(time=0.0, positions=np.zeros((1, 3)), unit_mass=1.0)
        phi = KernelDescriptor("PHI", center=(0.0, 0, 0), dim=3)
        with pytest.raises(SingularHitError):
            measure_apply(cloud, phi, floor=None)
        assert measure_apply(cloud, phi, floor=1e-8) > 0

    def test_mean_functional_vs_heat_flow(self):
        # E X_t(phi_x) is the heat-smoothed kernel under a unit point mass
        phi = KernelDescriptor("PHI", center=(0.5, 0, 0), dim=3)
        cfg = SimConfig(dim=3, n_init=400, t_max=1.0, seed=5, report_times=(1.0,))
        recs = run_replicates(cfg, {"phi": phi}, 150, workers=2)
        vals = np.array([functional_at(r, "phi", 1.0) for r in recs])
        oracle = radial.expect_distance(3, 1.0, 0.5, lambda r: 1.0 / r) \
            * (1.0 / (2.0 * math.pi))
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - oracle) <= 3.0 * se


class TestOccupation:
    def test_unregistered_kernel_errors(self):
        rec = simulate(small_config(), ONE, 0)
        with pytest.raises(KeyError):
            occupation_integral(rec, "nope")

    def test_off_grid_time_errors(self):
        rec = simulate(small_config(), ONE, 0)
        with pytest.raises(ValueError):
            occupation_integral(rec, "one", 0.73)

    def test_inverse_distance_occupation_mean(self):
        # E int_0^t X_s(1/|y-x|) ds against the closed-form time integral
        from sbmlab.cumulants import inv_distance_v1
        phi = KernelDescriptor("PHI", center=(0.5, 0, 0), dim=3)
        cfg = SimConfig(dim=3, n_init=400, t_max=1.0, seed=6, report_times=(1.0,))
        recs = run_replicates(cfg, {"phi": phi}, 150, workers=2)
        vals = np.array([occupation_integral(r, "phi", 1.0) for r in recs])
        oracle = float(inv_distance_v1(1.0, 0.5)) * (1.0 / (2.0 * math.pi))
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - oracle) <= 3.0 * se


class TestExtinctionMode:
    def test_run_to_extinction_records_zeta(self):
        cfg = SimConfig(dim=3, n_init=50, t_max=None, t_cap=30.0, seed=9,
                        functional_stride=2)
        recs = run_replicates(cfg, ONE, 60, workers=2)
        done = [r for r in recs if r.extinction_time is not None]
        assert len(done) > 50  # extinction is typical by t = 30
        for r in done:
            assert r.extinction_time > 0
            assert not r.censored
            assert r.mass[-1] == 0.0
        for r in recs:
            if r.censored:
                assert r.extinction_time is None

    def test_horizon_mode_keeps_running(self):
        cfg = small_config(n_init=40, seed=12)
        rec = simulate(cfg, ONE, 2)
        assert rec.report_times[-1] == pytest.approx(1.0)


class TestClusters:
    def test_accepted_cluster_survives(self):
        cfg = SimConfig(dim=3, n_init=100, t_max=0.5, seed=21, report_times=(0.5,))
        cs = sample_cluster((0.0, 0.0, 0.0), 0.2, cfg)
        assert cs.record.extinction_time is None or cs.record.extinction_time > 0.2

    def test_budget_error_carries_rate(self):
        cfg = SimConfig(dim=3, n_init=5000, t_max=0.5, seed=22, report_times=(0.5,))
        with pytest.raises(ClusterBudgetError) as exc:
            sample_cluster((0.0, 0.0, 0.0), 0.4, cfg, max_tries=3)
        assert exc.value.rate_estimate < 0.01

    def test_acceptance_rate_matches_survival_law(self):
        n, delta = 150, 0.25
        cfg = SimConfig(dim=3, n_init=n, t_max=delta, seed=23, report_times=(delta,))
        accepted, trials = 0, 0
        start = 0
        while accepted < 25:
            cs = sample_cluster((0.0, 0.0, 0.0), delta, cfg, start_trial=start)
            start += cs.rejects + 1
            trials += cs.rejects + 1
            accepted += 1
        rate = accepted / trials
        target = 1.0 - math.exp(-2.0 * (1.0 / n) / delta)
        se = math.sqrt(target * (1.0 - target) / trials)
        assert abs(rate - target) <= 3.0 * se

    def test_horizon_shorter_than_delta_rejected(self):
        cfg = SimConfig(dim=3, n_init=100, t_max=0.1, seed=2)
        with pytest.raises(ValueError):
            sample_cluster((0.0, 0.0, 0.0), 0.2, cfg)


class TestExport:
    def test_path_json_roundtrip(self, tmp_path):
        import json
        rec = simulate(small_config(), ONE, 0)
        out = tmp_path / "path.json"
        from sbmlab.particles import write_path_json
        write_path_json(rec, str(out))
        payload = json.loads(out.read_text())
        assert payload["record_hash"] == rec.record_hash()
        assert payload["mass"] == [float(v) for v in rec.mass]

    def test_snapshot_csv(self, tmp_path):
        from sbmlab.particles import write_snapshots_csv
        rec = simulate(small_config(n_init=30), ONE, 0, keep_positions=True)
        assert rec.snapshots is not None
        out = tmp_path / "snap.csv"
        write_snapshots_csv(rec, str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "t,particle,x0,x1,x2"
        assert len(lines) - 1 == sum(v.shape[0] for v in rec.snapshots.values())
        # no-snapshot records refuse to dump
        bare = simulate(small_config(n_init=30), ONE, 0)
        with pytest.raises(ValueError):
            write_snapshots_csv(bare, str(out))


class TestStride:
    def test_stride_close_to_full_resolution(self):
        reg = {"lt": KernelDescriptor("MOLLIFIED", center=(0.3, 0, 0), param=0.05, dim=3)}
        a = simulate(SimConfig(dim=3, n_init=300, t_max=1.0, seed=8,
                               report_times=(1.0,), functional_stride=1), reg, 0)
        b = simulate(SimConfig(dim=3, n_init=300, t_max=1.0, seed=8,
                               report_times=(1.0,), functional_stride=4), reg, 0)
        # identical particle paths, coarser trapezoid grid
        assert occupation_integral(b, "lt") == pytest.approx(
            occupation_integral(a, "lt"), rel=2e-2, abs=2e-3)

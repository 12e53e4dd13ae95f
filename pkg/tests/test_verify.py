import numpy as np
import pytest

from wignerlab import verify
from wignerlab.verify.experiments import _coerce, auto_eta, bulk_indices, t_of
from wignerlab.verify.report import ExperimentReport, batch_se


class TestReportMachinery:
    def test_batch_se_constant(self):
        mean, se = batch_se(np.full(100, 2.5))
        assert mean == 2.5
        assert se == 0.0

    def test_batch_se_matches_iid_scale(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(4000)
        _mean, se = batch_se(x)
        assert se == pytest.approx(1.0 / np.sqrt(4000), rel=0.4)

    def test_check_margins(self):
        rep = ExperimentReport("demo", {"a": 1}, 0)
        good = rep.check_le("ok", 0.5, 1.0)
        bad = rep.check_within("off", 2.0, 1.0, 0.5)
        assert good.passed and good.margin == pytest.approx(0.5)
        assert not bad.passed and bad.margin == pytest.approx(-0.5)
        assert not rep.passed
        blob = rep.to_json_dict()
        assert blob["schema_version"] == 1
        assert [c["pass"] for c in blob["checks"]] == [True, False]
        assert all("tolerance" in c and "margin" in c for c in blob["checks"])

    def test_series_roundtrip(self):
        rep = ExperimentReport("demo", {}, 0)
        rep.add_series("s", ("x", "y"), [(1, 2.0), (3, 4.5)])
        assert rep.series["s"]["rows"] == [[1.0, 2.0], [3.0, 4.5]]


class TestConfigHandling:
    def test_unknown_experiment(self):
        with pytest.raises(KeyError):
            verify.run_experiment("nonsense")

    def test_unknown_key(self):
        with pytest.raises(KeyError):
            verify.run_experiment("kernel-demo", {"bogus": 1})

    def test_coercion(self):
        assert _coerce("250", 100) == 250
        assert _coerce("0.5", 1.0) == 0.5
        assert _coerce("true", False) is True
        assert _coerce("500,1000", [1, 2]) == [500, 1000]
        assert _coerce("[0.5, 1.0]", [0.1]) == [0.5, 1.0]

    def test_t_of_prefers_explicit(self):
        assert t_of({"n": 100, "t_exp": 0.4, "t": 0.25}) == 0.25
        assert t_of({"n": 100, "t_exp": 0.5, "t": 0.0}) == pytest.approx(0.1)

    def test_auto_eta_inside_window(self):
        from wignerlab.freeconv import eta_window
        lo, hi = eta_window(500, 500 ** -0.4)
        assert lo <= auto_eta(500, 500 ** -0.4, "auto") <= hi
        assert auto_eta(500, 0.1, 0.01) == 0.01


class TestSharedCache:
    def test_same_object_returned(self):
        a = verify.shared_free_convolution("semicircle", 200, 0.1)
        b = verify.shared_free_convolution("semicircle", 200, 0.1)
        assert a is b

    def test_sigma_matches_freeconv_directly(self):
        # cross-module consistency: experiments never recompute sigma^2 ad hoc
        fc = verify.shared_free_convolution("semicircle", 200, 0.1)
        k = bulk_indices(fc, [0.0])[0]
        eta = auto_eta(200, 0.1, "auto")
        direct = fc.variance_profile_basis(k, eta)
        again = verify.shared_free_convolution("semicircle", 200, 0.1) \
            .variance_profile_basis(k, eta)
        assert np.array_equal(direct, again)


class TestExperimentsSmall:
    def test_gaussianity_report_shape(self):
        rep = verify.run_experiment("gaussianity", {"n": 120, "samples": 50, "q_count": 3})
        names = [c.name for c in rep.checks]
        assert {"moment2", "moment4", "moment6"} <= set(names)
        assert all(c.se is not None for c in rep.checks if c.name.startswith("moment"))
        assert "moments" in rep.series and "overlap_hist" in rep.series

    def test_gaussianity_goe_control(self):
        # pure Wigner control: sigma^2 == 1, Haar moments
        rep = verify.run_experiment(
            "gaussianity",
            {"n": 150, "samples": 80, "potential": "zero", "profile": "flat",
             "law": "goe", "q_count": 4})
        m2 = next(c for c in rep.checks if c.name == "moment2")
        assert m2.passed
        assert abs(m2.value - 1.0) < 0.1

    def test_gaussianity_hermitian_targets(self):
        rep = verify.run_experiment("gaussianity",
                                    {"n": 100, "samples": 60, "beta": 2, "q_count": 3})
        m4 = next(c for c in rep.checks if c.name == "moment4")
        assert "2" in m4.tolerance  # Hermitian fourth-moment target

    def test_weak_que_structure(self):
        rep = verify.run_experiment(
            "weak-que", {"n_ladder": "150,250", "samples_ladder": "40,30",
                         "n_indices": 3})
        names = [c.name for c in rep.checks]
        assert "exceedance_strictly_decreasing" in names
        assert "full_mass_profile_defect" in names
        rows = rep.series["exceedance"]["rows"]
        assert len(rows) == 2 * 3  # two rungs, three c values

    def test_determinism_bitwise(self):
        ov = {"n": 100, "samples": 30, "q_count": 2}
        a = verify.run_experiment("gaussianity", ov)
        b = verify.run_experiment("gaussianity", ov)
        assert a.to_json_dict() == b.to_json_dict()
        assert a.series == b.series

    def test_eta_window_flag_note(self):
        rep = verify.run_experiment("gaussianity",
                                    {"n": 100, "samples": 20, "eta": 0.3, "q_count": 2})
        assert any("outside" in note for note in rep.notes)

    def test_local_laws_series_rows(self):
        rep = verify.run_experiment("local-laws", {"n": 150, "samples": 15, "n_eta": 6})
        assert len(rep.series["residuals"]["rows"]) == 6

    def test_dbm_continuity_zero_tau_is_exact(self):
        rep = verify.run_experiment("dbm-continuity", {"n": 120, "samples": 25})
        # the tau = 0 column is the coupled base itself: difference identically 0
        assert all(r[0] > 0 for r in rep.series["differences"]["rows"])

    def test_advection_series(self):
        rep = verify.run_experiment("advection",
                                    {"n_pair": "200,400", "samples": 20})
        assert "p99_n200" in rep.series and "p99_n400" in rep.series
        assert any(c.name == "halving_under_doubling" for c in rep.checks)

    def test_moment_flow_demo_exact_checks(self):
        rep = verify.run_experiment(
            "moment-flow-demo",
            {"n_env": 150, "window": 50, "fs_window": 80, "mc_n": 120,
             "mc_samples": 25})
        by = {c.name: c for c in rep.checks}
        assert by["detailed_balance_residual"].value < 1e-12
        assert by["finite_speed_far_mass"].value <= 1e-8
        assert by["kernel_mass"].passed

    def test_kernel_demo_passes(self):
        rep = verify.run_experiment("kernel-demo")
        assert rep.passed


class TestWorkerPool:
    def test_parallel_sampling_matches_serial(self):
        ov = {"n": 80, "samples": 16, "q_count": 2}
        serial = verify.run_experiment("gaussianity", {**ov, "workers": 1})
        parallel = verify.run_experiment("gaussianity", {**ov, "workers": 2})
        a = {c.name: c.value for c in serial.checks}
        b = {c.name: c.value for c in parallel.checks}
        assert a == b

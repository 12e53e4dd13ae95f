import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import ks_2samp

from wignerlab import ensembles as ens
from wignerlab.freeconv import DiagonalPotential


def var_se(n_obs):
    """5 standard errors for an empirical variance of unit-variance entries."""
    return 5.0 * np.sqrt(2.0 / n_obs)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            ens.EnsembleSpec(1)
        with pytest.raises(ValueError):
            ens.EnsembleSpec(10, beta=3)
        with pytest.raises(ValueError):
            ens.EnsembleSpec(10, entry_law="cauchy")


class TestStreams:
    def test_reproducible(self):
        a = ens.stream(42, 3).standard_normal(5)
        b = ens.stream(42, 3).standard_normal(5)
        assert np.array_equal(a, b)

    def test_distinct_indices_differ(self):
        a = ens.stream(42, 0).standard_normal(5)
        b = ens.stream(42, 1).standard_normal(5)
        assert not np.array_equal(a, b)


class TestWignerSampling:
    @pytest.mark.parametrize("law", ["gaussian", "rademacher", "uniform", "smooth"])
    def test_offdiagonal_variance(self, law):
        n = 80
        w = ens.sample_wigner(ens.EnsembleSpec(n, 1, law, seed=1))
        off = w[np.triu_indices(n, 1)]
        n_obs = off.size
        assert abs(off.mean() * np.sqrt(n)) < 5.0 / np.sqrt(n_obs)
        assert abs(off.var() * n - 1.0) < var_se(n_obs)

    def test_diagonal_variance_is_one_over_n(self):
        # Wigner convention: every entry has variance 1/N, diagonal included
        n, reps = 60, 200
        diags = np.concatenate([
            np.diag(ens.sample_wigner(ens.EnsembleSpec(n, 1, "gaussian", seed=s)))
            for s in range(reps)])
        assert abs(diags.var() * n - 1.0) < var_se(diags.size)

    def test_goe_diagonal_variance_doubled(self):
        n, reps = 60, 200
        diags = np.concatenate([
            np.diag(ens.sample_wigner(ens.EnsembleSpec(n, 1, "goe", seed=s)))
            for s in range(reps)])
        assert abs(diags.var() * n - 2.0) < 2.0 * var_se(diags.size)

    def test_same_seed_identical(self):
        spec = ens.EnsembleSpec(40, 1, "smooth", seed=9)
        assert np.array_equal(ens.sample_wigner(spec), ens.sample_wigner(spec))

    def test_rademacher_support(self):
        n = 50
        w = ens.sample_wigner(ens.EnsembleSpec(n, 1, "rademacher", seed=2))
        off = np.abs(w[np.triu_indices(n, 1)])
        assert np.max(np.abs(off - 1.0 / np.sqrt(n))) == 0.0

    def test_exact_symmetry(self):
        w = ens.sample_wigner(ens.EnsembleSpec(64, 1, "uniform", seed=3))
        assert np.array_equal(w, w.T)

    def test_hermitian_case(self):
        n = 64
        w = ens.sample_wigner(ens.EnsembleSpec(n, 2, "gaussian", seed=4))
        assert np.array_equal(w, w.conj().T)
        assert np.all(np.imag(np.diag(w)) == 0.0)
        off = w[np.triu_indices(n, 1)]
        assert abs(np.mean(np.abs(off) ** 2) * n - 1.0) < var_se(off.size)


class TestSmoothLaw:
    def test_unit_variance(self):
        x = ens.sample_smooth_entries(ens.stream(5), 200_000)
        assert abs(x.var() - 1.0) < var_se(x.size)
        assert abs(x.mean()) < 5.0 / np.sqrt(x.size)

    def test_tail_fraction_against_quadrature(self):
        # oracle: integrate the shipped density beyond 6 standard deviations
        sd = ens.smooth_law_std()
        dens = lambda x: 2.0 * np.exp(-0.5 * x * x - abs(x)) / (1.0 + np.exp(-2.0 * abs(x)))
        z0 = quad(dens, -np.inf, np.inf)[0]
        tail = 2.0 * quad(dens, 6.0 * sd, np.inf)[0] / z0
        assert tail < 1e-3
        x = ens.sample_smooth_entries(ens.stream(6), 100_000)
        assert np.mean(np.abs(x) > 6.0) <= 1e-3

    def test_requires_smooth_law(self):
        with pytest.raises(ValueError):
            ens.sample_smooth_wigner(ens.EnsembleSpec(10, 1, "gaussian"))

    def test_sampler_terminates(self):
        x = ens.sample_smooth_entries(ens.stream(7), 1000)
        assert x.size == 1000


class TestDeform:
    def test_t_zero_returns_diagonal(self):
        pot = DiagonalPotential(np.array([-1.0, 0.0, 2.0]))
        w = ens.sample_wigner(ens.EnsembleSpec(3, 1, seed=1))
        assert np.array_equal(ens.deform(pot, 0.0, w), np.diag(pot.entries))

    def test_zero_noise(self):
        pot = DiagonalPotential(np.array([-1.0, 0.0, 2.0]))
        assert np.array_equal(ens.deform(pot, 0.7, np.zeros((3, 3))), np.diag(pot.entries))

    def test_trace_linearity(self):
        pot = DiagonalPotential(np.linspace(-1, 1, 30))
        w = ens.sample_wigner(ens.EnsembleSpec(30, 1, seed=5))
        h = ens.deform(pot, 0.49, w)
        assert abs(np.trace(h) - (pot.entries.sum() + np.sqrt(0.49) * np.trace(w))) < 1e-12

    def test_dimension_mismatch(self):
        pot = DiagonalPotential(np.zeros(4))
        with pytest.raises(ValueError):
            ens.deform(pot, 1.0, np.zeros((3, 3)))


class TestPotentials:
    def test_equispaced_three_points(self):
        pot = ens.build_potential("equispaced", 3, (-1.0, 1.0))
        assert np.array_equal(pot.entries, np.array([-1.0, 0.0, 1.0]))

    def test_semicircle_median_zero(self):
        pot = ens.build_potential("semicircle", 100)
        assert abs(pot.entries[49]) < 1e-6

    def test_semicircle_against_bisection_oracle(self):
        # independent oracle: bisection on the numerically integrated density
        n = 1000
        pot = ens.build_potential("semicircle", n)
        dens = lambda x: np.sqrt(max(4.0 - x * x, 0.0)) / (2.0 * np.pi)
        for i in (37, 250, 500, 711, 963):
            lo, hi = -2.0, 2.0
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                if quad(dens, -2.0, mid, limit=200)[0] < i / n:
                    lo = mid
                else:
                    hi = mid
            assert abs(pot.entries[i - 1] - 0.5 * (lo + hi)) < 1e-6

    def test_zero_kind(self):
        assert np.array_equal(ens.build_potential("zero", 5).entries, np.zeros(5))

    def test_file_roundtrip(self, tmp_path):
        path = tmp_path / "pot.txt"
        src = ens.build_potential("equispaced", 7, (-2.0, 3.0))
        ens.save_potential(path, src)
        back = ens.build_potential("file", params=str(path))
        assert np.allclose(back.entries, src.entries, atol=0, rtol=0)

    def test_parse_names(self):
        assert ens.parse_potential("zero", 4).label == "zero"
        assert ens.parse_potential("semicircle", 10).n == 10
        pot = ens.parse_potential("equispaced[-1,1]", 3)
        assert np.array_equal(pot.entries, np.array([-1.0, 0.0, 1.0]))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ens.build_potential("parabola", 5)


class TestDiagonalize:
    def test_diagonal_input(self):
        d = np.array([-0.5, 0.1, 2.0])
        s = ens.diagonalize(np.diag(d), check=True)
        assert np.allclose(s.eigenvalues, d)
        assert np.allclose(np.abs(s.eigenvectors), np.eye(3), atol=1e-14)

    def test_two_by_two_swap(self):
        s = ens.diagonalize(np.array([[0.0, 1.0], [1.0, 0.0]]), check=True)
        assert np.allclose(s.eigenvalues, [-1.0, 1.0])
        assert np.allclose(np.abs(s.eigenvectors), np.full((2, 2), 1.0 / np.sqrt(2)))

    def test_goe_reconstruction(self):
        h = ens.sample_wigner(ens.EnsembleSpec(50, 1, "goe", seed=11))
        s = ens.diagonalize(h, check=True)
        rec = s.eigenvectors @ np.diag(s.eigenvalues) @ s.eigenvectors.T
        assert np.max(np.abs(rec - h)) <= 1e-10

    def test_phase_fix_positive_lead(self):
        h = ens.sample_wigner(ens.EnsembleSpec(20, 2, "gaussian", seed=12))
        s = ens.diagonalize(h)
        lead = s.eigenvectors[np.argmax(np.abs(s.eigenvectors), axis=0), np.arange(20)]
        assert np.all(np.real(lead) > 0)
        assert np.max(np.abs(np.imag(lead))) < 1e-12

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ens.diagonalize(np.array([[np.inf, 0.0], [0.0, 1.0]]))

    def test_projection_parseval(self):
        s = ens.diagonalize(ens.sample_wigner(ens.EnsembleSpec(30, 1, seed=13)))
        q = np.zeros(30)
        q[4] = 1.0
        z = s.projections(q)
        assert abs(np.sum(z ** 2) / 30 - 1.0) < 1e-10


class TestMatrixDump:
    def test_roundtrip_real(self, tmp_path):
        h = ens.sample_wigner(ens.EnsembleSpec(17, 1, seed=21))
        path = tmp_path / "h.mat"
        ens.save_matrix(path, h)
        back, beta = ens.load_matrix(path)
        assert beta == 1
        assert np.array_equal(back, h)

    def test_roundtrip_hermitian(self, tmp_path):
        h = ens.sample_wigner(ens.EnsembleSpec(9, 2, seed=22))
        path = tmp_path / "h.mat"
        ens.save_matrix(path, h)
        back, beta = ens.load_matrix(path)
        assert beta == 2
        assert np.array_equal(back, h)

    def test_documented_layout(self, tmp_path):
        # parse the bytes by hand, exactly as the format spec describes
        h = np.array([[1.0, 2.0], [2.0, -3.5]])
        path = tmp_path / "h.mat"
        ens.save_matrix(path, h)
        raw = path.read_bytes()
        assert raw[:8] == b"WLMX0001"
        n, beta = np.frombuffer(raw[8:24], dtype="<i8")
        assert (n, beta) == (2, 1)
        body = np.frombuffer(raw[24:], dtype="<f8").reshape(2, 2)
        assert np.array_equal(body, h)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.mat"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ValueError):
            ens.load_matrix(path)


class TestDistributionalChecks:
    def test_haar_frame_moments(self):
        # Beta(1/2, (N-1)/2) oracle: E[N<q,u>^2] = 1, E[N^2 <q,u>^4] = 3N/(N+2)
        n, reps = 50, 400
        q = np.zeros(n)
        q[0] = 1.0
        x = np.empty(reps)
        for s in range(reps):
            smp = ens.diagonalize(ens.sample_wigner(ens.EnsembleSpec(n, 1, "goe", seed=s)))
            x[s] = smp.projections(q)[n // 2] ** 2  # z^2 = N <q,u>^2
        assert abs(x.mean() - 1.0) < 5.0 * x.std(ddof=1) / np.sqrt(reps)
        x2 = x ** 2
        target = 3.0 * n / (n + 2.0)
        assert abs(x2.mean() - target) < 5.0 * x2.std(ddof=1) / np.sqrt(reps)

    def test_constant_shift_exchangeability(self):
        # D = c*1: spectrum of W_t is c + sqrt(t) * (Wigner spectrum) in law
        n, reps, c, t = 100, 100, 0.3, 0.25
        pot = DiagonalPotential(np.full(n, c))
        a, b = [], []
        for s in range(reps):
            w = ens.sample_wigner(ens.EnsembleSpec(n, 1, "gaussian", seed=s))
            a.append(np.linalg.eigvalsh(ens.deform(pot, t, w)))
            w2 = ens.sample_wigner(ens.EnsembleSpec(n, 1, "gaussian", seed=10_000 + s))
            b.append(c + np.sqrt(t) * np.linalg.eigvalsh(w2))
        stat = ks_2samp(np.concatenate(a), np.concatenate(b))
        assert stat.pvalue > 1e-3

"""Monte Carlo experiments checking the distributional claims at desk scale.

Every experiment is a pure function of (config, master seed): sample streams
derive from counter-based generators, reductions are batched means, and each
reported comparison carries its tolerance and realized margin.  A shared
evaluator cache guarantees that every sigma^2 used anywhere comes from the
same free-convolution solve.
"""

from __future__ import annotations

import multiprocessing

import numpy as np

from .. import dynamics as dyn
from .. import ensembles as ens
from .. import momentflow as mf
from ..freeconv import FreeConvolution, eta_window
from .report import ExperimentReport, batch_se

_FC_CACHE = {}


def shared_free_convolution(potential_name, n, t, tol=1e-12, damping=0.5):
    """One FreeConvolution per (potential, N, t, solver): shared sigma^2 cache."""
    key = (potential_name, int(n), float(t), float(tol), float(damping))
    if key not in _FC_CACHE:
        pot = ens.parse_potential(potential_name, int(n))
        _FC_CACHE[key] = FreeConvolution(pot, float(t), tol=tol, damping=damping)
    return _FC_CACHE[key]


def fc_from_cfg(cfg, n, t):
    return shared_free_convolution(cfg["potential"], n, t,
                                   cfg.get("solver_tol", 1e-12),
                                   cfg.get("solver_damping", 0.5))


def _pmap(fn, jobs, workers):
    if workers and workers > 1:
        with multiprocessing.Pool(int(workers)) as pool:
            return pool.map(fn, jobs)
    return [fn(j) for j in jobs]


def t_of(cfg, n=None):
    n = cfg["n"] if n is None else n
    return float(cfg["t"]) if cfg.get("t") else float(n) ** (-cfg["t_exp"])


def auto_eta(n, t, eta_cfg):
    """Default spectral resolution: geometric middle of the admissible window."""
    if eta_cfg not in (None, 0, "auto"):
        return float(eta_cfg)
    lo, hi = eta_window(n, t)
    return float(np.sqrt(lo * hi))


def flag_windows(report, n, t, eta, omega=0.1, r=1.0):
    lo, hi = n ** (-1.0 + omega), n ** (-omega) * r
    if not lo <= t <= hi:
        report.note(f"t = {t:.4g} outside the mesoscopic window [{lo:.3g}, {hi:.3g}] (flag only)")
    elo, ehi = eta_window(n, t, omega)
    if not elo <= eta <= ehi:
        report.note(f"eta = {eta:.4g} outside [{elo:.3g}, {ehi:.3g}]; allowed for eta << t, flagged")


def bulk_indices(fc, targets):
    """1-based quantile indices whose gamma_k be closest to the energy targets."""
    gam = fc.quantiles()
    return [int(np.argmin(np.abs(gam - e))) + 1 for e in np.atleast_1d(targets)]


def random_unit(n, seed, index=900_000):
    q = ens.stream(seed, index).standard_normal(n)
    return q / np.linalg.norm(q)


def _deformed_sample(pot, t, beta, law, seed, index):
    w = ens.sample_wigner(ens.EnsembleSpec(pot.n, beta, law, seed=seed + index))
    return ens.diagonalize(ens.deform(pot, t, w))


# ---------------------------------------------------------------------------
# gaussianity


GAUSSIANITY_DEFAULTS = {
    "n": 1000, "beta": 1, "t_exp": 0.4, "t": 0.0, "potential": "semicircle",
    "law": "gaussian", "samples": 400, "n_indices": 5, "k_window": 0.5,
    "q_kind": "random", "q_count": 8, "profile": "sigma", "eta": "auto",
    "seed": 1234, "workers": 1, "n_batches": 20, "solver_tol": 1e-12,
    "solver_damping": 0.5,
}


def _gaussianity_job(args):
    pot, t, beta, law, seed, idx, qs, ks, peaks = args
    smp = _deformed_sample(pot, t, beta, law, seed, idx)
    z = pot.n * np.abs(smp.eigenvectors.conj().T @ qs.T) ** 2  # (N, J): z_k(q_j)^2
    u = smp.eigenvectors
    peak = np.array([abs(u[a, k - 1]) ** 2 for k, a in zip(ks, peaks)])
    return z[[k - 1 for k in ks], :], peak


def gaussianity(cfg):
    """Moments 2/4/6 of the normalized overlap against the Gaussian targets.

    Statistics pool over samples, bulk indices, and a small batch of fixed
    unit directions (one direction's sigma^2 carries heavy-tailed weighting
    noise of relative size ~ 1/sqrt(Nt)).
    """
    rep = ExperimentReport("gaussianity", cfg, cfg["seed"])
    n, beta, m = cfg["n"], cfg["beta"], cfg["samples"]
    t = 1.0 if cfg["profile"] == "flat" else t_of(cfg)
    fc = fc_from_cfg(cfg, n, t)
    eta = auto_eta(n, t, cfg["eta"])
    flag_windows(rep, n, t, eta)
    targets_e = np.linspace(-cfg["k_window"], cfg["k_window"], cfg["n_indices"])
    ks = bulk_indices(fc, targets_e)
    if cfg["q_kind"] == "random":
        qs = np.stack([random_unit(n, cfg["seed"], 900_000 + j)
                       for j in range(cfg["q_count"])])
    else:
        qs = np.zeros((1, n))
        qs[0, int(cfg["q_kind"])] = 1.0
    gam = fc.quantiles()
    peaks = [int(np.argmin(np.abs(fc.potential.entries - gam[k - 1]))) for k in ks]
    if cfg["profile"] == "flat":
        sig = np.ones((len(ks), qs.shape[0]))
        sig_peak = np.ones(len(ks))
    else:
        sig = np.array([[fc.variance_profile(q, k, eta) for q in qs] for k in ks])
        sig_peak = np.array([fc.variance_profile_basis(k, eta)[a] for k, a in zip(ks, peaks)])

    jobs = [(fc.potential, t, beta, cfg["law"], cfg["seed"], i, qs, ks, peaks)
            for i in range(m)]
    rows = _pmap(_gaussianity_job, jobs, cfg["workers"])
    w = np.array([r[0] for r in rows])          # (M, n_k, J): z_k(q_j)^2
    peak_mass = np.array([r[1] for r in rows])  # (M, n_k): u_k(alpha*)^2
    # E[N |<q,u>|^2] = sigma^2 in both symmetry classes; the normalized square
    # is chi^2_1 for beta = 1 and |N1 + i N2|^2 / 2 for beta = 2
    y = w / sig[None, :, :]
    targets = (1.0, 3.0, 15.0) if beta == 1 else (1.0, 2.0, 6.0)

    series_rows = []
    for p, target in enumerate(targets, start=1):
        est, se = batch_se(np.mean(y ** p, axis=(1, 2)), cfg["n_batches"])
        tol = max(5.0 * se, 0.05 * target)
        rep.check_within(f"moment{2 * p}", est, target, tol, se,
                         tolerance=f"|m{2*p} - {target:g}| <= max(5 SE, 5%)")
        for j, k in enumerate(ks):
            series_rows.append((k, 2 * p, float(np.mean(y[:, j, :] ** p)), target))
    rep.add_series("moments", ("k", "order", "estimate", "target"), series_rows)

    if len(ks) > 1:
        corr = np.corrcoef(y[:, :, 0].T)
        off = np.abs(corr[~np.eye(len(ks), dtype=bool)])
        rep.check_le("max_offdiag_correlation", float(off.max()), 5.0 / np.sqrt(m),
                     tolerance="joint independence: |corr| <= 5/sqrt(M)")

    ratio, rse = batch_se(np.mean(n * peak_mass / sig_peak[None, :], axis=1),
                          cfg["n_batches"])
    rep.check_true("peak_coordinate_variance_ratio", 0.9 <= ratio <= 1.1, ratio,
                   "N E[u_k(alpha*)^2] / sigma^2(e_alpha*, k) in [0.9, 1.1]")

    hist, edges = np.histogram(np.sqrt(np.clip(y.ravel(), 0, None)), bins=40, density=True)
    rep.add_series("overlap_hist", ("bin_center", "density"),
                   [((edges[i] + edges[i + 1]) / 2, hist[i]) for i in range(len(hist))])
    return rep


# ---------------------------------------------------------------------------
# variance profile fit


VARIANCE_PROFILE_DEFAULTS = {
    "n": 2000, "beta": 1, "t_exp": 0.4, "t": 0.0, "potential": "semicircle",
    "law": "gaussian", "samples": 200, "samples2": 60, "n_indices": 8,
    "k_window": 0.15, "t_factor": 2.0, "eta": "auto", "seed": 1234,
    "workers": 1, "n_batches": 20, "solver_tol": 1e-12, "solver_damping": 0.5,
}


def _profile_job(args):
    pot, t, law, seed, idx, ks = args
    smp = _deformed_sample(pot, t, 1, law, seed, idx)
    return np.stack([pot.n * smp.eigenvectors[:, k - 1] ** 2 for k in ks])


def _empirical_profiles(cfg, t, samples, seed_base):
    fc = fc_from_cfg(cfg, cfg["n"], t)
    ks = bulk_indices(fc, np.linspace(-cfg["k_window"], cfg["k_window"], cfg["n_indices"]))
    jobs = [(fc.potential, t, cfg["law"], cfg["seed"], seed_base + i, ks)
            for i in range(samples)]
    acc = _pmap(_profile_job, jobs, cfg["workers"])
    emp = np.mean(acc, axis=0)  # (n_indices, N): E[N u_k(alpha)^2]
    eta = auto_eta(cfg["n"], t, cfg["eta"])
    pred = np.stack([fc.variance_profile_basis(k, eta) for k in ks])
    return fc, ks, emp, pred


def _halfwidth(profile, entries):
    """Full width at half maximum of a profile over the potential coordinates."""
    peak = np.argmax(profile)
    half = profile[peak] / 2.0
    above = np.nonzero(profile >= half)[0]
    return entries[above[-1]] - entries[above[0]], int(above.size)


def _pooled_profile(fc, ks, emp, pred, reach):
    """Average the per-k profiles after aligning each predicted peak at 0."""
    offsets = np.arange(-reach, reach + 1)
    n = fc.potential.n
    emp_rows, pred_rows = [], []
    for j in range(len(ks)):
        a0 = int(np.argmax(pred[j]))
        idx = np.clip(a0 + offsets, 0, n - 1)
        emp_rows.append(emp[j, idx])
        pred_rows.append(pred[j, idx])
    return offsets, np.mean(emp_rows, axis=0), np.mean(pred_rows, axis=0)


def _quartile_width(offsets, profile, spacing):
    """Mass-quartile range in energy units (equals the FWHM for a Cauchy)."""
    c = np.cumsum(profile)
    c = c / c[-1]
    x25 = np.interp(0.25, c, offsets)
    x75 = np.interp(0.75, c, offsets)
    return float((x75 - x25) * spacing)


def _smoothed(profile, w=5):
    kernel = np.ones(w) / w
    return np.convolve(profile, kernel, mode="same")


def variance_profile_fit(cfg):
    """Heavy-tailed profile regression: shape, localization span, width scaling.

    The empirical map alpha -> E[N u_k(alpha)^2] pools the re-centered bulk
    indices before the comparison; one index alone carries a Monte Carlo
    noise floor of sqrt(2/M) in relative L2, at the level of the tolerance.
    """
    rep = ExperimentReport("variance-profile", cfg, cfg["seed"])
    n = cfg["n"]
    t = t_of(cfg)
    flag_windows(rep, n, t, auto_eta(n, t, cfg["eta"]))
    fc, ks, emp, pred = _empirical_profiles(cfg, t, cfg["samples"], 0)
    reach = int(3 * n * t)
    offsets, emp_avg, pred_avg = _pooled_profile(fc, ks, emp, pred, reach)
    rel_l2 = float(np.linalg.norm(emp_avg - pred_avg) / np.linalg.norm(pred_avg))
    rep.check_le("profile_rel_l2_error", rel_l2, 0.10,
                 tolerance="relative L2 fit error <= 0.10")

    smooth = _smoothed(emp_avg)
    span = float(np.sum(smooth >= smooth.max() / 2.0))
    rep.check_true("localization_span_sites", 0.5 * n * t <= span <= 2.0 * n * t, span,
                   f"half-max span within factor 2 of Nt = {n * t:.1f}")

    spacing = float(np.median(np.diff(fc.potential.entries[ks[0]:ks[-1] + 1])))
    width = _quartile_width(offsets, emp_avg, spacing)
    fc2, ks2, emp2, pred2 = _empirical_profiles(
        {**cfg, "n_indices": 4}, t * cfg["t_factor"], cfg["samples2"], 700_000)
    off2, emp2_avg, _pred2_avg = _pooled_profile(
        fc2, ks2, emp2, pred2, int(3 * n * t * cfg["t_factor"]))
    spacing2 = float(np.median(np.diff(fc2.potential.entries[ks2[0]:ks2[-1] + 1])))
    width2 = _quartile_width(off2, emp2_avg, spacing2)
    growth = width2 / width
    rep.check_within("halfwidth_growth_vs_t", growth, cfg["t_factor"],
                     0.2 * cfg["t_factor"],
                     tolerance="fitted half-width linear in t within 20%")

    rep.add_series("profile", ("offset", "empirical", "predicted"),
                   np.column_stack([offsets, emp_avg, pred_avg]))
    rep.add_series("halfwidths", ("t", "width_energy"),
                   [(t, width), (t * cfg["t_factor"], width2)])
    return rep


# ---------------------------------------------------------------------------
# weak quantum unique ergodicity


WEAK_QUE_DEFAULTS = {
    # the index window scales with the localization length (|I| ~ i_fraction
    # * Nt) so both terms of the exceedance bound C (N^-theta + 1/|I|) shrink
    # along the ladder; i_halfwidth >= 0 overrides with a fixed half-width
    "n_ladder": [500, 1000, 2000], "samples_ladder": [700, 420, 220],
    "beta": 1, "t_exp": 0.4, "potential": "semicircle", "law": "gaussian",
    "n_indices": 7, "k_window": 0.45, "i_fraction": 0.10, "i_halfwidth": -1,
    "c_grid": [0.5, 1.0, 2.0], "eta": "auto", "seed": 1234, "workers": 1,
    "n_batches": 20, "solver_tol": 1e-12, "solver_damping": 0.5,
}


def _weak_que_job(args):
    pot, t, law, seed, idx, ks, windows = args
    smp = _deformed_sample(pot, t, 1, law, seed, idx)
    out = np.empty(len(ks))
    for j, (k, (lo, hi)) in enumerate(zip(ks, windows)):
        out[j] = np.sum(smp.eigenvectors[lo:hi, k - 1] ** 2)
    return out


def _que_windows(fc, ks, halfwidth):
    windows, peaks = [], []
    gam = fc.quantiles()
    for k in ks:
        a = int(np.argmin(np.abs(fc.potential.entries - gam[k - 1])))
        peaks.append(a)
        windows.append((max(0, a - halfwidth), min(fc.potential.n, a + halfwidth + 1)))
    return windows, peaks


def weak_que(cfg):
    """Exceedance of the mass deviation (Nt/|I|) |sum_I u^2 - profile| over c."""
    rep = ExperimentReport("weak-que", cfg, cfg["seed"])
    ladder = list(cfg["n_ladder"])
    exceed_rows, p1 = [], []
    for n, m in zip(ladder, cfg["samples_ladder"]):
        t = float(n) ** (-cfg["t_exp"])
        fc = fc_from_cfg(cfg, n, t)
        eta = auto_eta(n, t, cfg["eta"])
        ks = bulk_indices(fc, np.linspace(-cfg["k_window"], cfg["k_window"], cfg["n_indices"]))
        half = cfg["i_halfwidth"] if cfg["i_halfwidth"] >= 0 else \
            max(1, int(round(cfg["i_fraction"] * n * t / 2)))
        windows, _ = _que_windows(fc, ks, half)
        prof = [fc.variance_profile_basis(k, eta)[lo:hi].sum() / n
                for k, (lo, hi) in zip(ks, windows)]
        jobs = [(fc.potential, t, cfg["law"], cfg["seed"], i, ks, windows) for i in range(m)]
        mass = np.array(_pmap(_weak_que_job, jobs, cfg["workers"]))
        size = windows[0][1] - windows[0][0]
        dev = (n * t / size) * np.abs(mass - np.asarray(prof)[None, :])
        for c in cfg["c_grid"]:
            p, se = batch_se((dev > c).astype(float).ravel(), cfg["n_batches"])
            exceed_rows.append((n, c, p, se))
            if c == 1.0:
                p1.append((n, p, se))
    decreasing = all(a[1] > b[1] for a, b in zip(p1, p1[1:]))
    rep.check_true("exceedance_strictly_decreasing",
                   decreasing, p1[-1][1],
                   "P(dev > 1) strictly decreasing over the N-ladder")
    for n, p, se in p1:
        rep.check_le(f"exceedance_c1_n{n}", p, 1.0, se, tolerance="reported with SE")

    # full-mass identity: sum over all coordinates is exactly 1, so the
    # deviation reduces to the profile normalization defect
    n, t = ladder[-1], float(ladder[-1]) ** (-cfg["t_exp"])
    fc = fc_from_cfg(cfg, n, t)
    ks = bulk_indices(fc, [0.0])
    norm = fc.variance_profile_basis(ks[0], 1e-3 * t).mean()
    rep.check_within("full_mass_profile_defect", norm, 1.0, 1e-2,
                     tolerance="|1 - (1/N) sum sigma^2| <= 1e-2 at small eta")

    # far-window tail: observed mass within 2x profile prediction + noise
    far_lo = int(np.argmin(np.abs(fc.potential.entries - fc.quantiles()[ks[0] - 1]))) \
        + int(5 * n * t)
    windows = [(far_lo, far_lo + int(n * t))]
    jobs = [(fc.potential, t, cfg["law"], cfg["seed"], 500_000 + i, ks, windows)
            for i in range(60)]
    far_mass = np.array(_pmap(_weak_que_job, jobs, cfg["workers"])).ravel()
    prof_far = fc.variance_profile_basis(ks[0], auto_eta(n, t, cfg["eta"]))[
        windows[0][0]:windows[0][1]].sum() / n
    est, se = batch_se(far_mass, cfg["n_batches"])
    rep.check_le("far_window_mass", est, 2.0 * prof_far + 5.0 * se, se,
                 tolerance="mass <= 2x profile tail + 5 SE")

    rep.add_series("exceedance", ("n", "c", "probability", "se"), exceed_rows)
    return rep


# ---------------------------------------------------------------------------
# strong quantum unique ergodicity


STRONG_QUE_DEFAULTS = {
    "n_ladder": [500, 1000, 2000], "samples_ladder": [400, 240, 120],
    "beta": 1, "t_exp": 0.4, "potential": "semicircle", "law": "gaussian",
    "n_indices": 5, "k_window": 0.4, "i_fraction": 0.5, "quantile": 0.999,
    "n_boot": 400, "seed": 1234, "workers": 1, "n_batches": 20,
    "solver_tol": 1e-12, "solver_damping": 0.5,
}


def _strong_que_job(args):
    pot, t, tau0, law, seed, idx, ks, lo, hi, prof = args
    w = ens.sample_wigner(ens.EnsembleSpec(pot.n, 1, law, seed=seed + idx))
    h = ens.deform(pot, t, w) + np.sqrt(tau0) * ens.sample_gaussian_noise(
        pot.n, 1, seed=seed + idx, index=77)
    smp = ens.diagonalize(h)
    diag = np.empty(len(ks))
    offd = np.empty(len(ks) - 1)
    for j, k in enumerate(ks):
        diag[j] = abs(np.sum(smp.eigenvectors[lo:hi, k - 1] ** 2) - prof[j])
        if j:
            offd[j - 1] = abs(np.sum(smp.eigenvectors[lo:hi, ks[j - 1] - 1]
                                     * smp.eigenvectors[lo:hi, k - 1]))
    return diag, offd


def strong_que(cfg):
    """Gaussian-divisible ensemble: 99.9% quantiles of |mass - profile| / Xi."""
    rep = ExperimentReport("strong-que", cfg, cfg["seed"])
    rng = np.random.default_rng(cfg["seed"])
    qrows, qdiag, qoff, raw_off = [], [], [], []
    boot_samples = {}
    for n, m in zip(cfg["n_ladder"], cfg["samples_ladder"]):
        t = float(n) ** (-cfg["t_exp"])
        tau0 = (t * t / n) ** (1.0 / 3.0)
        fc = fc_from_cfg(cfg, n, t)
        ks = bulk_indices(fc, np.linspace(-cfg["k_window"], cfg["k_window"], cfg["n_indices"]))
        gam = fc.quantiles()
        center = int(np.argmin(np.abs(fc.potential.entries - gam[ks[len(ks) // 2] - 1])))
        half = max(1, int(cfg["i_fraction"] * n * t / 2))
        lo, hi = max(0, center - half), min(n, center + half)
        size = hi - lo
        ihat = min(size / (n * t), 1.0)
        xi = ihat / (n * t) ** (1.0 / 3.0)
        eta0 = (n * t) ** (2.0 / 3.0) / n
        prof = [fc.variance_profile_basis(k, eta0)[lo:hi].sum() / n for k in ks]
        jobs = [(fc.potential, t, tau0, cfg["law"], cfg["seed"], i, ks, lo, hi, prof)
                for i in range(m)]
        rows = _pmap(_strong_que_job, jobs, cfg["workers"])
        diag = np.array([r[0] for r in rows]).ravel() / xi
        offd = np.array([r[1] for r in rows]).ravel() / xi
        raw_off.append(np.array([r[1] for r in rows]).ravel())
        qd = float(np.quantile(diag, cfg["quantile"]))
        qo = float(np.quantile(offd, cfg["quantile"]))
        qdiag.append(qd)
        qoff.append(qo)
        qrows.append((n, qd, qo))
        boot_samples[n] = (diag, offd)

    logn = np.log(np.asarray(cfg["n_ladder"], float))
    x = logn - logn.mean()

    def slope(qs):
        return float(np.dot(x, np.log(qs)) / np.dot(x, x))

    slopes = np.empty(cfg["n_boot"])
    for b in range(cfg["n_boot"]):
        qs = [np.quantile(rng.choice(boot_samples[n][0], boot_samples[n][0].size),
                          cfg["quantile"]) for n in cfg["n_ladder"]]
        slopes[b] = slope(qs)
    lo5 = float(np.quantile(slopes, 0.05))
    rep.check_le("diag_quantile_growth_lower_bound", lo5, 0.0,
                 tolerance="no increasing trend at 95% confidence (bootstrap q05 of slope <= 0)")
    rep.check_le("offdiag_quantile_point_slope", slope(qoff), 0.5,
                 tolerance="off-diagonal quantile stays bounded (reported point slope)")

    # sign symmetry of the eigenvectors makes the signed overlap sum vanish
    n, t = cfg["n_ladder"][0], float(cfg["n_ladder"][0]) ** (-cfg["t_exp"])
    fc = fc_from_cfg(cfg, n, t)
    ks = bulk_indices(fc, [0.0, 0.1])
    signed = []
    for i in range(80):
        w = ens.sample_wigner(ens.EnsembleSpec(n, 1, cfg["law"], seed=cfg["seed"] + 600_000 + i))
        h = ens.deform(fc.potential, t, w)
        smp = ens.diagonalize(h)
        lo, hi = 0, int(n * t)
        signed.append(np.sum(smp.eigenvectors[lo:hi, ks[0] - 1]
                             * smp.eigenvectors[lo:hi, ks[1] - 1]))
    est, se = batch_se(signed, cfg["n_batches"])
    rep.check_le("offdiag_signed_mean", abs(est), 5.0 * max(se, 1e-12), se,
                 tolerance="E[sum_I u_k u_l] = 0 within 5 SE")
    rep.add_series("quantiles", ("n", "diag_q", "offdiag_q"), qrows)
    return rep


# ---------------------------------------------------------------------------
# local laws


LOCAL_LAWS_DEFAULTS = {
    "n": 1000, "beta": 1, "t_exp": 0.4, "t": 0.0, "potential": "semicircle",
    "law": "gaussian", "samples": 100, "n_eta": 8, "k_window": 0.3,
    "n_diag": 8, "n_pairs": 6, "seed": 1234, "workers": 1, "n_batches": 20,
    "solver_tol": 1e-12, "solver_damping": 0.5,
}


def _local_laws_job(args):
    pot, t, beta, law, seed, idx, zs, diag_idx, pairs, q, ks = args
    smp = _deformed_sample(pot, t, beta, law, seed, idx)
    lam, u = smp.eigenvalues, smp.eigenvectors
    res = 1.0 / (lam[None, :] - zs[:, None])          # (nz, N)
    s = res.mean(axis=1)
    proj2 = np.abs(u.conj().T @ q) ** 2               # |<u_k, q>|^2
    gqq = (res * proj2[None, :]).sum(axis=1)
    gii = np.stack([(res * (np.abs(u[i, :]) ** 2)[None, :]).sum(axis=1)
                    for i in diag_idx])
    gij = np.stack([(res * (u[i, :] * u[j, :].conj())[None, :]).sum(axis=1)
                    for i, j in pairs])
    overlap = pot.n * np.max(proj2[[k - 1 for k in ks]])
    return s, gqq, gii, gij, overlap


def local_laws(cfg):
    """Residual scaling of averaged, entrywise and isotropic resolvent laws."""
    rep = ExperimentReport("local-laws", cfg, cfg["seed"])
    n = cfg["n"]
    t = t_of(cfg)
    fc = fc_from_cfg(cfg, n, t)
    etas = np.geomspace(5.0 / n, t / 3.0, cfg["n_eta"])
    energies = [fc.quantiles()[k - 1] for k in bulk_indices(fc, [-0.3, 0.0, 0.3])]
    zs = np.array([e + 1j * h for h in etas for e in energies])
    flag_windows(rep, n, t, etas[0])

    ks = bulk_indices(fc, np.linspace(-cfg["k_window"], cfg["k_window"], 5))
    diag_idx = [int(np.argmin(np.abs(fc.potential.entries - fc.quantiles()[k - 1])))
                for k in bulk_indices(fc, np.linspace(-0.25, 0.25, cfg["n_diag"]))]
    pairs = [(diag_idx[i], diag_idx[(i + 3) % len(diag_idx)]) for i in range(cfg["n_pairs"])]
    q = random_unit(n, cfg["seed"])

    mt = fc.solve_grid(zs)
    g = 1.0 / (fc.potential.entries[None, :] - zs[:, None] - t * mt[:, None])
    gq_ref = (g * (q ** 2)[None, :]).sum(axis=1)

    jobs = [(fc.potential, t, cfg["beta"], cfg["law"], cfg["seed"], i, zs,
             diag_idx, pairs, q, ks) for i in range(cfg["samples"])]
    rows = _pmap(_local_laws_job, jobs, cfg["workers"])

    r_avg = np.mean([np.abs(r[0] - mt) for r in rows], axis=0)
    r_iso = np.mean([np.abs(r[1] - gq_ref) / np.abs(gq_ref.imag) for r in rows], axis=0)
    gd = np.stack([g[:, i] for i in diag_idx], axis=0)
    r_diag = np.mean([np.abs(r[2] - gd) / (t * np.abs(gd) ** 2) for r in rows], axis=0).mean(axis=0)
    gmin = np.stack([np.minimum(np.abs(g[:, i]), np.abs(g[:, j])) for i, j in pairs])
    r_off = np.mean([np.abs(r[3]) / gmin for r in rows], axis=0).mean(axis=0)
    overlaps = np.array([r[4] for r in rows])

    nz = len(energies)
    per_eta = lambda v: v.reshape(len(etas), nz).mean(axis=1)
    x = np.log(1.0 / (n * etas))

    def fit(v):
        y = np.log(per_eta(v))
        return float(np.polyfit(x, y, 1)[0])

    s_avg, s_iso, s_diag, s_off = fit(r_avg), fit(r_iso), fit(r_diag), fit(r_off)
    rep.check_true("averaged_law_slope", 0.85 <= s_avg <= 1.15, s_avg,
                   "log-log slope of |s_t - m_t| vs 1/(N eta) in [0.85, 1.15]")
    rep.check_true("isotropic_law_slope", 0.35 <= s_iso <= 0.65, s_iso,
                   "slope vs 1/(N eta) in [0.35, 0.65] <=> (N eta)^{-1/2} rate")
    rep.check_true("entry_diag_slope", 0.2 <= s_diag <= 0.8, s_diag,
                   "entrywise diagonal residual ~ (N eta)^{-1/2} (reported band)")
    rep.check_true("entry_offdiag_slope", 0.2 <= s_off <= 0.8, s_off,
                   "entrywise off-diagonal residual ~ (N eta)^{-1/2} (reported band)")
    rep.check_le("bulk_overlap_sup", float(overlaps.max()), n ** 0.1 / t,
                 tolerance="max_k N <q,u_k>^2 <= N^0.1 / t over all samples")

    rep.add_series("residuals", ("eta", "avg", "iso", "diag", "offdiag"),
                   np.column_stack([etas, per_eta(r_avg), per_eta(r_iso),
                                    per_eta(r_diag), per_eta(r_off)]))
    return rep


# ---------------------------------------------------------------------------
# continuity of the variance-preserving flow


DBM_CONTINUITY_DEFAULTS = {
    "n": 1000, "beta": 1, "t_exp": 0.4, "t": 0.0, "potential": "semicircle",
    "law": "gaussian", "samples": 120, "a_exp": 0.1, "seed": 1234,
    "workers": 1, "n_batches": 20, "solver_tol": 1e-12, "solver_damping": 0.5,
}


def _continuity_job(args):
    pot, t, law, seed, idx, taus, z, q = args
    w = ens.sample_wigner(ens.EnsembleSpec(pot.n, 1, law, seed=seed + idx))
    h0 = ens.deform(pot, t, w)
    eye = np.eye(pot.n)
    out = []
    for j, tau in enumerate(taus):
        h = h0 if tau == 0.0 else dyn.ou_flow(h0, pot, t, tau, seed=seed + idx, index=10 + j)
        sol = np.linalg.solve(h - z * eye, q)
        out.append(np.vdot(q, sol))
    return np.array(out)


def dbm_continuity(cfg):
    """Smooth resolvent functionals barely move over tau << sqrt(t/N)."""
    rep = ExperimentReport("dbm-continuity", cfg, cfg["seed"])
    n = cfg["n"]
    t = t_of(cfg)
    fc = fc_from_cfg(cfg, n, t)
    tau_max = n ** (-cfg["a_exp"]) * np.sqrt(t / n)
    taus = (0.0, tau_max / 4.0, tau_max)
    z = complex(fc.quantiles()[bulk_indices(fc, [0.0])[0] - 1], t / 5.0)
    q = random_unit(n, cfg["seed"])
    mref = (1.0 / (fc.potential.entries - z - t * fc.solve_m(z)) * q ** 2).sum()

    jobs = [(fc.potential, t, cfg["law"], cfg["seed"], i, taus, z, q)
            for i in range(cfg["samples"])]
    rows = np.array(_pmap(_continuity_job, jobs, cfg["workers"]))
    f1 = rows.imag / mref.imag             # normalized smooth functional
    f2 = np.tanh(rows.real / abs(mref))    # bounded smooth functional

    diffs = {}
    for name, f in (("im", f1), ("re", f2)):
        base = f[:, 0]
        for j, tau in enumerate(taus[1:], start=1):
            d, se = batch_se(f[:, j] - base, cfg["n_batches"])
            diffs[(name, tau)] = (abs(d), se)
    d_quarter = diffs[("im", taus[1])]
    d_full = diffs[("im", taus[2])]
    budget = 3.0 * (4.0 * d_quarter[0]) + 5.0 * (d_full[1] + 4.0 * d_quarter[1])
    rep.check_le("linear_in_tau_trend", d_full[0], budget, d_full[1],
                 tolerance="diff(tau) <= 3 x (4 x diff(tau/4)) + 5 SE (linear-in-tau)")
    rep.check_le("smooth_functional_shift", d_full[0], 0.05, d_full[1],
                 tolerance="normalized functional moves < 5% over tau_max")
    rep.check_within("re_functional_shift", diffs[("re", taus[2])][0], 0.0, 0.05,
                     diffs[("re", taus[2])][1],
                     tolerance="bounded functional moves < 5% over tau_max")
    rep.add_series("differences", ("tau", "diff_im", "se_im", "diff_re", "se_re"),
                   [(tau, diffs[("im", tau)][0], diffs[("im", tau)][1],
                     diffs[("re", tau)][0], diffs[("re", tau)][1]) for tau in taus[1:]])
    return rep


# ---------------------------------------------------------------------------
# advection along characteristics


ADVECTION_DEFAULTS = {
    # calibrated_p99 frozen from the desk-scale calibration run: the 99th
    # percentile of (N eta)|G_tau - G_0(z_tau)| measures 13-16 over the
    # default grid (the transported resolvent carries slowly varying
    # log-factor corrections on top of the 1/(N eta) rate)
    "n_pair": [1000, 2000], "samples": 100, "tau_exp": 0.5, "eta_exp": 0.6,
    "eta_factors": [1.0, 2.0, 4.0], "energies": [-0.5, 0.0, 0.5],
    "calibrated_p99": 20.0, "macro_diff": 0.02, "seed": 1234, "workers": 1,
    "n_batches": 20,
}


def _advection_job(args):
    pot, tau, seed, idx, zs, q = args
    zero = ens.parse_potential("zero", pot.n)
    h = dyn.ou_flow(np.diag(pot.entries), zero, 1.0, tau, seed=seed + idx)
    smp = ens.diagonalize(h)
    zk = smp.projections(q)
    out = np.empty(len(zs))
    for j, z in enumerate(zs):
        gt = dyn.renormalized_resolvent(smp.eigenvalues, zk, tau, z)
        g0 = dyn.initial_resolvent(pot, q, dyn.characteristic(z, tau))
        out[j] = abs(gt - g0)
    return out


def advection_check(cfg):
    """(N eta) |G_tau(z) - G_0(z_tau)|: size, eta stability, N scaling."""
    rep = ExperimentReport("advection", cfg, cfg["seed"])
    p99 = {}
    for n in cfg["n_pair"]:
        pot = ens.parse_potential("semicircle", n)
        tau = float(n) ** (-cfg["tau_exp"])
        etas = float(n) ** (-cfg["eta_exp"]) * np.asarray(cfg["eta_factors"])
        zs = np.array([e + 1j * h for h in etas for e in cfg["energies"]])
        q = random_unit(n, cfg["seed"])
        jobs = [(pot, tau, cfg["seed"], i, zs, q) for i in range(cfg["samples"])]
        rows = np.array(_pmap(_advection_job, jobs, cfg["workers"]))
        raw = rows.reshape(cfg["samples"], len(etas), len(cfg["energies"]))
        p99[n] = np.percentile(raw, 99.0, axis=(0, 2))  # per eta, |Delta G|
        normalized = p99[n] * n * etas
        rep.check_le(f"p99_normalized_n{n}", float(normalized.max()),
                     cfg["calibrated_p99"],
                     tolerance=f"(N eta)|G_tau - G_0(z_tau)| p99 <= {cfg['calibrated_p99']}")
        rep.check_le(f"eta_stability_n{n}",
                     float(normalized.max() / normalized.min()), 2.0,
                     tolerance="p99 stable within x2 across the eta grid")
        rep.add_series(f"p99_n{n}", ("eta", "p99_raw", "p99_normalized"),
                       np.column_stack([etas, p99[n], normalized]))

        # macroscopic eta is easy
        z_macro = np.array([0.2 + 0.9j])
        jobs = [(pot, tau, cfg["seed"], 300_000 + i, z_macro, q) for i in range(40)]
        macro = np.array(_pmap(_advection_job, jobs, cfg["workers"])).ravel()
        rep.check_le(f"macroscopic_eta_diff_n{n}", float(np.percentile(macro, 99)),
                     cfg["macro_diff"],
                     tolerance=f"|G_tau - G_0(z_tau)| <= {cfg['macro_diff']} at eta ~ 1")

    if len(cfg["n_pair"]) == 2:
        a, b = cfg["n_pair"]
        # compare raw differences at the matched eta values of the smaller N
        etas_a = float(a) ** (-cfg["eta_exp"]) * np.asarray(cfg["eta_factors"])
        etas_b = float(b) ** (-cfg["eta_exp"]) * np.asarray(cfg["eta_factors"])
        interp = np.interp(etas_a, etas_b, p99[b])
        ratio = float(np.median(interp / p99[a]))
        rep.check_true("halving_under_doubling", 0.3 <= ratio <= 0.8, ratio,
                       "p99 raw-difference ratio (2N over N, same eta) in [0.3, 0.8]")
    return rep


# ---------------------------------------------------------------------------
# moment flow demo


MOMENT_FLOW_DEFAULTS = {
    "n_env": 400, "window": 120, "ell": 10, "fs_ell": 6, "fs_window": 200,
    "mc_n": 300, "mc_samples": 80, "t_exp": 0.4, "law": "gaussian",
    "potential": "semicircle", "seed": 1234, "workers": 1, "n_batches": 20,
    "solver_tol": 1e-12, "solver_damping": 0.5,
}


def moment_flow_demo(cfg):
    """Generator sanity, reversibility, finite speed, and the profile target."""
    rep = ExperimentReport("moment-flow-demo", cfg, cfg["seed"])
    n = cfg["n_env"]
    lam = ens.parse_potential("semicircle", n).entries
    lo = (n - cfg["window"]) // 2
    window = range(lo, lo + cfg["window"])

    space = mf.enumerate_configs(window, 1)
    full = mf.build_generator(space, lam)
    short = mf.build_generator(space, lam, ell=cfg["ell"])
    lng = mf.build_generator(space, lam, ell=cfg["ell"], complement=True)
    split = float(np.abs((short.matrix + lng.matrix - full.matrix).toarray()).max())
    rep.check_le("short_plus_long_equals_full", split, 1e-10,
                 tolerance="S + L = B entrywise")
    rowsum = float(np.abs(np.asarray(full.matrix.sum(axis=1))).max())
    rep.check_le("row_sums_zero", rowsum, 1e-10 * max(1.0, full.max_diagonal()),
                 tolerance="generator conservation up to rounding")
    db_space = mf.enumerate_configs(range(lo, lo + 8), 2)
    db = mf.detailed_balance_residual(mf.build_generator(db_space, lam, boundary="reflect"))
    rep.check_le("detailed_balance_residual", db, 1e-12,
                 tolerance="pi(eta) r(eta->xi) = pi(xi) r(xi->eta) to 1e-12")

    # evolve a bump: the maximum principle is asserted inside the integrator
    f0 = np.exp(-0.5 * ((np.arange(space.size) - space.size / 2) / 8.0) ** 2)
    out = mf.evolve(short, f0, 0.002, reference=0.0)
    rep.check_le("max_principle_bump", float(out.max()), float(f0.max()) + 1e-9,
                 tolerance="max non-increasing along the flow")

    # finite speed at the frozen desk instance
    fs_lo = (n - cfg["fs_window"]) // 2
    fs_space = mf.enumerate_configs(range(fs_lo, fs_lo + cfg["fs_window"]), 1)
    tau = cfg["fs_ell"] / (4.0 * n)
    gen = mf.build_generator(fs_space, lam, ell=cfg["fs_ell"])
    start = (n // 2,)
    p = mf.transition_kernel(gen, start, tau)
    d = fs_space.distances_from(start)
    far = float(p[:fs_space.size][d >= 8 * cfg["fs_ell"]].sum()) + float(p[-1])
    rep.check_le("finite_speed_far_mass", far, 1e-8,
                 tolerance="mass beyond 8 ell <= 1e-8 at ell = 4 N tau")
    rep.check_within("kernel_mass", float(p.sum()), 1.0, 1e-10,
                     tolerance="semigroup row sums to 1 +- 1e-10")

    # Monte Carlo single-particle moment against the variance profile
    nm = cfg["mc_n"]
    t = float(nm) ** (-cfg["t_exp"])
    fc = fc_from_cfg(cfg, nm, t)
    ks = bulk_indices(fc, [0.0, 0.15])
    eta = auto_eta(nm, t, "auto")
    q = random_unit(nm, cfg["seed"])
    samples = [_deformed_sample(fc.potential, t, 1, cfg["law"], cfg["seed"], i)
               for i in range(cfg["mc_samples"])]
    rows = []
    for k in ks:
        est, se = mf.moment_observable(samples, q, (k - 1,))
        sig = fc.variance_profile(q, k, eta)
        rows.append((k, est, se, sig))
        rep.check_within(f"moment_vs_profile_k{k}", est / sig, 1.0,
                         max(5.0 * se / sig, 0.25), se / sig,
                         tolerance="E[z_k^2] / sigma^2 within max(5 SE, 25%)")
    est2, se2 = mf.moment_observable(samples, q, (ks[0] - 1, ks[1] - 1))
    prod = rows[0][3] * rows[1][3]
    rep.check_within("two_particle_product_target", est2 / prod, 1.0,
                     max(5.0 * se2 / prod, 0.35), se2 / prod,
                     tolerance="E[z^2 z^2] / (sigma^2 sigma^2) within max(5 SE, 35%)")
    rep.add_series("moments_vs_profile", ("k", "estimate", "se", "sigma2"), rows)
    rep.add_series("relaxed_bump", ("config_index", "site", "value"),
                   space.to_rows(out))
    return rep


# ---------------------------------------------------------------------------
# kernel demo


KERNEL_DEMO_DEFAULTS = {
    "xs": [-1.2, -0.5, 0.0, 0.3, 0.9], "ts": [0.5, 1.0], "shape_t": 0.01,
    "n_nodes": 2000, "seed": 1234, "workers": 1, "n_batches": 20,
}


def kernel_demo(cfg):
    """Continuum kernel: stochasticity, eigen-decay, small-time Cauchy shape."""
    rep = ExperimentReport("kernel-demo", cfg, cfg["seed"])
    worst = 0.0
    rows = []
    for x in cfg["xs"]:
        for t in cfg["ts"]:
            mass = mf.kernel_mass(x, t, cfg["n_nodes"])
            rows.append((x, t, mass))
            worst = max(worst, abs(mass - 1.0))
    rep.check_le("stochasticity_worst_defect", worst, 1e-6,
                 tolerance="int p_t drho = 1 +- 1e-6 on the (x, t) grid")

    eig_worst = 0.0
    for order in range(6):
        f = lambda x, m=order: mf.chebyshev_u(m, x)
        for x in (-0.7, 0.1, 0.8):
            got = mf.apply_K(f, x, n_nodes=4000)
            want = 0.5 * order * f(x)
            eig_worst = max(eig_worst, abs(got - want) / max(1.0, abs(want)))
    rep.check_le("eigenfunction_residual", eig_worst, 2e-3,
                 tolerance="K U_m = (m/2) U_m within 2e-3 relative")

    t = cfg["shape_t"]
    ys = np.linspace(-0.5, 0.5, 201)
    p = mf.kernel_pt(0.0, ys, t)
    cauchy = t / (ys ** 2 + t ** 2)
    shape = float(np.max(np.abs(p - cauchy) / cauchy))
    rep.check_le("small_t_cauchy_shape", shape, 0.15,
                 tolerance="sup rel deviation from t/((x-y)^2 + t^2) <= 15%")

    flat = float(np.max(np.abs(mf.kernel_pt(np.asarray(cfg["xs"]), 0.3, 60.0) - 1.0)))
    rep.check_le("long_time_flat", flat, 1e-12, tolerance="p_t -> 1 as t -> inf")

    y, w = mf.gauss_chebyshev_nodes(cfg["n_nodes"])
    for tt in cfg["ts"]:
        rep.add_series(f"kernel_slice_t{tt}", ("y", "p"),
                       np.column_stack([y, mf.kernel_pt(0.3, y, tt)]))
    rep.add_series("stochasticity", ("x", "t", "mass"), rows)
    return rep


# ---------------------------------------------------------------------------
# registry


EXPERIMENTS = {
    "gaussianity": (gaussianity, GAUSSIANITY_DEFAULTS,
                    "Gaussianity of bulk eigenvectors: moments 2/4/6 of the "
                    "normalized overlap sqrt(N/sigma_t^2) |<q, u_k>| against the "
                    "Gaussian targets (symmetric and Hermitian classes)."),
    "variance-profile": (variance_profile_fit, VARIANCE_PROFILE_DEFAULTS,
                         "Heavy-tailed Cauchy shape of the variance profile: "
                         "regression of E[N u_k(alpha)^2], localization span ~ Nt, "
                         "half-width linear in t."),
    "weak-que": (weak_que, WEAK_QUE_DEFAULTS,
                 "Weak quantum unique ergodicity: exceedance probability of the "
                 "normalized mass deviation, decreasing along the N-ladder."),
    "strong-que": (strong_que, STRONG_QUE_DEFAULTS,
                   "Strong quantum unique ergodicity for the Gaussian-divisible "
                   "ensemble: high quantiles of |mass - profile| per error envelope."),
    "local-laws": (local_laws, LOCAL_LAWS_DEFAULTS,
                   "Averaged, entrywise and isotropic local laws: residual rates "
                   "1/(N eta) and (N eta)^{-1/2}, plus the bulk overlap bound."),
    "dbm-continuity": (dbm_continuity, DBM_CONTINUITY_DEFAULTS,
                       "Continuity along the variance-preserving flow: smooth "
                       "resolvent functionals move O(tau)."),
    "advection": (advection_check, ADVECTION_DEFAULTS,
                  "Stochastic advection: the renormalized resolvent is transported "
                  "along the characteristic map z_tau up to O(1/(N eta))."),
    "moment-flow-demo": (moment_flow_demo, MOMENT_FLOW_DEFAULTS,
                         "Eigenvector moment flow at desk scale: conservation, "
                         "reversibility, finite speed, and the variance-profile "
                         "product target."),
    "kernel-demo": (kernel_demo, KERNEL_DEMO_DEFAULTS,
                    "Bulk relaxation kernel: stochasticity against the semicircle "
                    "law, eigenfunction decay, small-time Cauchy asymptotics."),
}


def experiment_names():
    return list(EXPERIMENTS)


def describe(name):
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}")
    fn, defaults, text = EXPERIMENTS[name]
    lines = [f"{name}: {text}", "", "defaults:"]
    for k in sorted(defaults):
        lines.append(f"  {k} = {defaults[k]}")
    return "\n".join(lines)


def run_experiment(name, overrides=None):
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}")
    fn, defaults, _text = EXPERIMENTS[name]
    cfg = dict(defaults)
    for key, val in (overrides or {}).items():
        if key not in cfg:
            raise KeyError(f"unknown config key {key!r} for {name}")
        cfg[key] = _coerce(val, cfg[key])
    return fn(cfg)


def _coerce(value, template):
    if isinstance(value, str):
        if isinstance(template, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(template, int):
            return int(value)
        if isinstance(template, float):
            return float(value)
        if isinstance(template, list):
            parts = [p for p in value.replace("[", "").replace("]", "").split(",") if p.strip()]
            inner = template[0] if template else 0.0
            return [type(inner)(float(p)) if not isinstance(inner, str) else p.strip()
                    for p in parts]
        return value
    return value

"""Time evolution: matrix flows, the eigenvalue/eigenvector SDE, characteristics.

Two interchangeable-in-law backends drive every experiment:

* exact-in-law matrix noise: ``add_brownian`` (H0 + sqrt(s) G) and
  ``ou_flow`` (variance-preserving Ornstein-Uhlenbeck around diag(D)),
  followed by re-diagonalization;
* the explicit Euler-Maruyama integrator ``evolve_sde`` for the coupled
  eigenvalue/eigenvector stochastic dynamics

      d lam_k = dB_kk / sqrt(N) + (1/N) sum_{l != k} ds / (lam_k - lam_l),
      d z_k   = (1/sqrt(N)) sum_{l != k} dB_kl z_l / (lam_k - lam_l)
                - (1/2N) sum_{l != k} z_k ds / (lam_k - lam_l)^2,

  where z_k = sqrt(N) <q, u_k> and B is symmetric with off-diagonal standard
  Brownian entries and diagonal variance doubled.

The characteristic map z_tau and the renormalized resolvent

    G_tau(z) = (e^{-tau/2} / N) sum_k z_k(tau)^2 / (lam_k(tau) - z)

support the advection comparison G_tau(z) ~ G_0(z_tau) for semicircle-rigid
initial data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ensembles import sample_gaussian_noise, stream


class CollisionError(RuntimeError):
    """Two eigenvalues collided during SDE integration."""

    def __init__(self, i, j, gap):
        super().__init__(f"eigenvalue collision between indices {i} and {j} (gap {gap:.3e})")
        self.pair = (i, j)
        self.gap = gap


def add_brownian(h0, s, seed=0, index=0, rng=None):
    """Matrix Brownian increment, exact in law at a fixed time: H0 + sqrt(s) G."""
    if s < 0:
        raise ValueError("s must be >= 0")
    if s == 0:
        return h0.copy()
    beta = 2 if np.iscomplexobj(h0) else 1
    g = sample_gaussian_noise(h0.shape[0], beta=beta, seed=seed, index=index, rng=rng)
    return h0 + np.sqrt(s) * g


def ou_flow(h0, potential, t, tau, seed=0, index=0, rng=None):
    """Variance-preserving Ornstein-Uhlenbeck flow around diag(D), exact in law.

    Solves d(H - D) = dB/sqrt(N) - (H - D)/(2t) ds from H(0) = h0, i.e.

        H(tau) = D + e^{-tau/2t} (h0 - D) + sqrt(t (1 - e^{-tau/t})) G,

    which matches D + sqrt(t') W + sqrt(tau') G with t' = t e^{-tau/t} and
    tau' = t (1 - e^{-tau/t}).  With h0 = diag(D'), potential zero and t = 1
    this is the unit-variance flow e^{-tau/2} D' + sqrt(1 - e^{-tau}) G.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    d = np.diag(potential.entries).astype(h0.dtype)
    if tau == 0:
        return h0.copy()
    beta = 2 if np.iscomplexobj(h0) else 1
    g = sample_gaussian_noise(h0.shape[0], beta=beta, seed=seed, index=index, rng=rng)
    return d + np.exp(-tau / (2.0 * t)) * (h0 - d) + np.sqrt(t * (1.0 - np.exp(-tau / t))) * g


# ---------------------------------------------------------------------------
# the explicit SDE integrator


@dataclass
class DBMState:
    """State of the coupled eigenvalue/eigenvector dynamics.

    Reduced mode tracks only the projections z_k = sqrt(N) <q, u_k> (the
    closed dynamics for a fixed direction q); full mode carries the whole
    eigenvector matrix.  In reduced mode sum z_k^2 / N == 1 is enforced.
    """

    s: float
    lam: np.ndarray
    z: np.ndarray | None = None
    u: np.ndarray | None = None
    q: np.ndarray | None = None

    @classmethod
    def from_sample(cls, sample, q, reduced=True):
        z = sample.projections(q)
        if reduced:
            return cls(s=0.0, lam=sample.eigenvalues.copy(), z=np.real(z), q=np.asarray(q, float))
        return cls(s=0.0, lam=sample.eigenvalues.copy(), z=np.real(z),
                   u=sample.eigenvectors.copy(), q=np.asarray(q, float))

    def parseval_defect(self):
        return abs(float(np.sum(self.z ** 2)) / self.lam.size - 1.0)


def _check_gaps(lam):
    gaps = np.diff(lam)
    scale = max(1.0, float(np.max(np.abs(lam))))
    floor = 10.0 * np.finfo(float).eps * scale
    k = int(np.argmin(gaps))
    if gaps[k] < floor:
        raise CollisionError(k, k + 1, float(gaps[k]))
    return float(gaps[k])


def evolve_sde(state, dtau, substeps, seed=0, index=0, rng=None, drift_only=False,
               safety=0.01, max_steps=5_000_000):
    """Advance the dynamics by dtau with Euler-Maruyama stepping.

    Preconditions: strictly separated eigenvalues, and the stability guard
    dtau/substeps <= 0.1 * N * (min gap)^2 against the initial state.  Each
    substep is further subdivided adaptively so one step never exceeds
    safety * N * (current min gap)^2 — the per-step noise then stays ~7
    standard deviations below the tightest gap.  A gap at 10 machine epsilons
    (or an ordering violation) aborts with the offending index pair; the
    projections are renormalized to sum z_k^2 = N after every step.
    ``drift_only`` switches the Brownian terms off (deterministic
    characteristics, used for drift diagnostics).
    """
    if dtau < 0:
        raise ValueError("dtau must be >= 0")
    substeps = int(substeps)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if rng is None:
        rng = stream(seed, index)
    lam = state.lam.copy()
    z = None if state.z is None else state.z.copy()
    u = None if state.u is None else state.u.copy()
    n = lam.size
    h_sub = dtau / substeps
    gap = _check_gaps(lam)
    if h_sub > 0.1 * n * gap * gap:
        raise ValueError(
            f"stability guard violated: dtau/substeps = {h_sub:.3e} exceeds "
            f"0.1 * N * min_gap^2 = {0.1 * n * gap * gap:.3e}")
    iu = np.triu_indices(n, k=1)
    steps_taken = 0
    for _ in range(substeps):
        remaining = h_sub
        while remaining > 0.0:
            gap = _check_gaps(lam)
            h = min(remaining, safety * n * gap * gap)
            steps_taken += 1
            if steps_taken > max_steps:
                # a near-collision consumed the refinement budget: same abort
                # semantics as an actual collision
                k = int(np.argmin(np.diff(lam)))
                raise CollisionError(k, k + 1, float(np.diff(lam)[k]))
            delta = lam[:, None] - lam[None, :]
            with np.errstate(divide="ignore"):
                inv = 1.0 / delta
            np.fill_diagonal(inv, 0.0)
            # symmetric Brownian increment: off-diagonal variance h, diagonal 2h
            b = np.zeros((n, n))
            if not drift_only:
                b[iu] = rng.standard_normal(iu[0].size) * np.sqrt(h)
            b = b + b.T
            diag = np.zeros(n) if drift_only else rng.standard_normal(n) * np.sqrt(2.0 * h)
            lam_new = lam + diag / np.sqrt(n) + h * np.sum(inv, axis=1) / n
            if np.any(np.diff(lam_new) <= 0):
                k = int(np.argmin(np.diff(lam_new)))
                raise CollisionError(k, k + 1, float(np.diff(lam_new)[k]))
            if z is not None or u is not None:
                rot = (b * inv) / np.sqrt(n)
                decay = 0.5 * h * np.sum(inv * inv, axis=1) / n
                if z is not None:
                    z = z + rot @ z - decay * z
                    z *= np.sqrt(n / np.sum(z ** 2))
                if u is not None:
                    u = u + u @ (rot.T - np.diag(decay))
                    u, r = np.linalg.qr(u)
                    u = u * np.sign(np.diag(r))[None, :]
            lam = lam_new
            remaining -= h
    return replace(state, s=state.s + dtau, lam=lam, z=z, u=u)


# ---------------------------------------------------------------------------
# characteristics and the renormalized resolvent

from .freeconv import sqrt_spectral  # noqa: E402  (shared branch convention)


def characteristic(z, tau):
    """Characteristic trajectory of the semicircle advection flow.

    z_tau = (e^{tau/2} (z + sqrt(z^2-4)) + e^{-tau/2} (z - sqrt(z^2-4))) / 2
    on the branch with sqrt(z^2-4) ~ z at infinity; satisfies the semigroup
    property and m_sc(z_tau) = e^{-tau/2} m_sc(z).
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise ValueError("characteristics require Im z > 0")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau == 0:
        return complex(z) if z.shape == () else z.copy()
    w = sqrt_spectral(z)
    out = 0.5 * (np.exp(tau / 2.0) * (z + w) + np.exp(-tau / 2.0) * (z - w))
    return complex(out) if out.shape == () else out


def renormalized_resolvent(lam, zk, tau, z):
    """G_tau(z) = (e^{-tau/2}/N) sum_k |z_k|^2 / (lam_k - z)."""
    lam = np.asarray(lam, dtype=float)
    z = complex(z)
    if np.min(np.abs(lam - z)) < 1e-12:
        raise ValueError("z is within 1e-12 of an eigenvalue")
    weight = np.abs(zk) ** 2 if np.iscomplexobj(zk) else np.asarray(zk) ** 2
    return np.exp(-tau / 2.0) * np.mean(weight / (lam - z))


def resolvent_flow(sample, q, tau, z):
    """Evaluate G_tau(z) from an evolved spectral sample for direction q."""
    zk = sample.projections(q)
    return renormalized_resolvent(sample.eigenvalues, zk, tau, z)


def initial_resolvent(potential, q, w):
    """G_0 evaluated at w for the diagonal start: sum_a q_a^2 / (D_a - w)."""
    q = np.asarray(q)
    return complex(np.sum(np.abs(q) ** 2 / (potential.entries - complex(w))))


def advection_pair(potential, q, tau, z, sample):
    """(G_tau(z), G_0(z_tau)) for the transported-resolvent comparison."""
    return resolvent_flow(sample, q, tau, z), initial_resolvent(potential, q, characteristic(z, tau))


# ---------------------------------------------------------------------------
# trajectory checkpoints


def save_checkpoint(prefix, h, s, seed, tag):
    """Matrix dump plus a sidecar text record {s, seed, model tag}."""
    from .ensembles import save_matrix

    save_matrix(str(prefix) + ".mat", h)
    with open(str(prefix) + ".txt", "w") as f:
        f.write(f"s = {s!r}\nseed = {seed}\ntag = {tag}\n")


def load_checkpoint(prefix):
    from .ensembles import load_matrix

    h, _beta = load_matrix(str(prefix) + ".mat")
    meta = {}
    with open(str(prefix) + ".txt") as f:
        for line in f:
            key, _, val = line.partition("=")
            meta[key.strip()] = val.strip()
    return h, float(meta["s"]), int(meta["seed"]), meta["tag"]

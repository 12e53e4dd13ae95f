"""Deterministic spectral theory for diagonal-plus-mean-field ensembles.

The central object is the self-consistent Stieltjes transform m_t of the
limiting spectral measure of ``diag(D) + sqrt(t) * W``::

    m_t(z) = (1/N) sum_k 1 / (D_k - z - t * m_t(z)),   Im z > 0,

whose unique solution with positive imaginary part encodes the density
rho_t = Im m_t / pi, its quantiles gamma_{i,t}, the resolvent weights
g_i(t, z) = 1 / (D_i - z - t * m_t(z)), and the per-coordinate variance
profile

    sigma_t^2(q, k, eta) = sum_a q_a^2 * t /
        ((D_a - gamma_{k,t})^2 + (t * Im m_t(gamma_{k,t} + i*eta))^2).

Everything in this module is deterministic given (D, t) and the solver
parameters.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson


class FixedPointError(RuntimeError):
    """Raised when the self-consistent equation does not converge."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class QuadratureError(RuntimeError):
    """Raised when the quantile quadrature misses its tolerance."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


# ---------------------------------------------------------------------------
# semicircle reference law (unit variance, support [-2, 2])

def sqrt_spectral(z):
    """sqrt(z^2 - 4) on the branch cut [-2, 2], asymptotic to z at infinity.

    Computed as sqrt(z - 2) * sqrt(z + 2) with principal square roots; for
    Im z > 0 this is the branch consistent with the Stieltjes transform of
    the semicircle law.
    """
    z = np.asarray(z, dtype=complex)
    return np.sqrt(z - 2.0) * np.sqrt(z + 2.0)


def m_semicircle(z):
    """Stieltjes transform of the semicircle law, m(z) = (-z + sqrt(z^2-4))/2."""
    z = np.asarray(z, dtype=complex)
    return 0.5 * (-z + sqrt_spectral(z))


def semicircle_density(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) < 2.0, np.sqrt(np.clip(4.0 - x * x, 0.0, None)) / (2.0 * np.pi), 0.0)


def semicircle_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), -2.0, 2.0)
    return 0.5 + x * np.sqrt(4.0 - x * x) / (4.0 * np.pi) + np.arcsin(x / 2.0) / np.pi


def eta_window(n, t, omega=0.1):
    """Spectral-resolution window [N^(omega-1), N^(-omega) sqrt(t/N)] for sigma^2."""
    return n ** (-1.0 + omega), n ** (-omega) * np.sqrt(t / n)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiagonalPotential:
    """Sorted deterministic diagonal D_1 <= ... <= D_N (the initial spectrum)."""

    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        ent = np.asarray(self.entries, dtype=float)
        if ent.ndim != 1 or ent.size < 2:
            raise ValueError("potential needs at least 2 entries")
        if not np.all(np.isfinite(ent)):
            raise ValueError("potential entries must be finite")
        if np.any(np.diff(ent) < 0):
            raise ValueError("potential entries must be sorted non-decreasing")
        object.__setattr__(self, "entries", ent)

    @property
    def n(self):
        return self.entries.size

    def stieltjes(self, z):
        """Raw atomic transform m_D(z) = (1/N) sum 1/(D_k - z)."""
        z = np.asarray(z, dtype=complex)
        return np.mean(1.0 / (self.entries[:, None] - z.ravel()[None, :]), axis=0).reshape(z.shape)


class FreeConvolution:
    """Evaluator for m_t, rho_t, quantiles and the variance profile at fixed (D, t).

    The instance is immutable apart from an internal memo of solved points,
    which is lock-protected so concurrent reads are safe; pickling drops the
    lock so evaluators can be shipped to workers.

    Parameters
    ----------
    potential : DiagonalPotential
    t : float
        Perturbation scale, >= 0.  t = 0 falls back to the exact atomic
        transform.
    tol : float
        Absolute fixed-point residual required of every returned point.
    max_iter, damping : int, float
        Damped-iteration budget per continuation stage and its step factor;
        Newton polishing takes over when plain iteration stalls.
    """

    def __init__(self, potential, t, tol=1e-12, max_iter=200, damping=0.5, quad_tol=2e-4):
        if t < 0:
            raise ValueError("t must be >= 0")
        self.potential = potential
        self.t = float(t)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.damping = float(damping)
        self.quad_tol = float(quad_tol)
        self._memo = {}
        self._lock = threading.Lock()
        self._quantiles = None
        self._quantile_residual = None

    # pickling: drop the lock, keep the memo
    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_lock")
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    # -- solver core --------------------------------------------------------

    def _iterate(self, zs, m0, tol=None):
        """Solve the fixed point at an array of points zs, warm-started at m0.

        Damped iteration with Newton fallback; every point is pushed to a
        residual floor well below ``tol``.  Raises FixedPointError when a
        point refuses to converge.
        """
        D = self.potential.entries[:, None]
        t = self.t
        tol = self.tol if tol is None else tol
        zs = np.asarray(zs, dtype=complex).ravel()
        m = np.array(m0, dtype=complex).ravel().copy()

        def resid(mv):
            r = 1.0 / (D - zs[None, :] - t * mv[None, :])
            return r.mean(axis=0), t * (r * r).mean(axis=0)

        F, Fp = resid(m)
        h = m - F
        prev = np.abs(h)
        d = self.damping
        for _ in range(self.max_iter):
            if np.all(prev <= tol):
                break
            m = (1.0 - d) * m + d * F
            F, Fp = resid(m)
            h = m - F
            cur = np.abs(h)
            if not np.any(cur <= 0.3 * prev):
                # no point is contracting quickly: hand over to Newton
                prev = cur
                break
            prev = cur
        # Newton with half-plane guard, pushed toward the rounding floor
        best = prev
        stall = 0
        for _ in range(40):
            if np.max(best) <= max(1e-15, 1e-3 * tol):
                break
            step = h / (1.0 - Fp)
            mn = m - step
            for _ in range(50):
                bad = mn.imag <= 0
                if not np.any(bad):
                    break
                step = np.where(bad, 0.5 * step, step)
                mn = m - step
            m = mn
            F, Fp = resid(m)
            h = m - F
            cur = np.abs(h)
            if np.any(cur < 0.5 * best):
                stall = 0
            else:
                stall += 1
                if stall >= 2:
                    break
            best = np.minimum(best, cur)
        bound = np.abs(h / (1.0 - Fp))
        worst = float(np.max(np.abs(h)))
        if worst > tol or np.max(bound) > tol:
            raise FixedPointError(
                f"fixed point not converged (residual {worst:.3e}); "
                "increase damping or lift Im z", residual=worst)
        return m

    def solve_m(self, z):
        """Solve m_t(z) for a single point z with Im z > 0."""
        z = complex(z)
        if z.imag <= 0:
            raise ValueError("z must lie in the upper half plane")
        with self._lock:
            hit = self._memo.get(z)
        if hit is not None:
            return hit
        if self.t == 0.0:
            m = complex(self.potential.stieltjes(np.array([z]))[0])
        else:
            m = complex(self.solve_grid(np.array([z]))[0])
        with self._lock:
            self._memo[z] = m
        return m

    def _lift_solve(self, flat):
        """Continuation from high Im z: lift to Im z >= 1, walk down geometrically."""
        eta = flat.imag
        lift0 = np.maximum(1.0, eta)
        # intermediate stages only seed the next one, so solve them loosely
        rough = max(self.tol, 1e-9)
        m = self._iterate(flat.real + 1j * lift0, np.full(flat.shape, 1j), tol=rough)
        cur = lift0
        while np.any(cur > eta):
            cur = np.maximum(eta, 0.4 * cur)
            last = not np.any(cur > eta)
            m = self._iterate(flat.real + 1j * cur, m, tol=None if last else rough)
        return m

    def solve_grid(self, zs, block=64):
        """Solve m_t at an array of points.

        Points are processed in blocks ordered by (descending Im, ascending
        Re); each block warm-starts from its neighbor, falling back to
        continuation from high Im z whenever the warm start stalls.
        Deterministic given (D, t, zs, solver parameters).
        """
        zs = np.asarray(zs, dtype=complex)
        if np.any(zs.imag <= 0):
            raise ValueError("all points must lie in the upper half plane")
        if self.t == 0.0:
            return self.potential.stieltjes(zs)
        flat = zs.ravel()
        order = np.lexsort((flat.real, -flat.imag))
        out = np.empty(flat.shape, dtype=complex)
        warm = None
        for start in range(0, flat.size, block):
            idx = order[start:start + block]
            pts = flat[idx]
            try:
                if warm is None:
                    sol = self._lift_solve(pts)
                else:
                    sol = self._iterate(pts, np.full(pts.shape, warm))
            except FixedPointError:
                sol = self._lift_solve(pts)
            out[idx] = sol
            warm = sol[-1]
        return out.reshape(zs.shape)

    # -- derived quantities --------------------------------------------------

    def g_values(self, z):
        """Resolvent weights g_i = 1/(D_i - z - t m_t(z)); mean(g) == m_t(z)."""
        m = self.solve_m(z)
        return 1.0 / (self.potential.entries - complex(z) - self.t * m)

    def stieltjes_bounds(self, z):
        """Diagnostic (min_i |1/g_i|, max_i |1/g_i|) = min/max |D_i - z - t m_t|."""
        m = self.solve_m(z)
        a = np.abs(self.potential.entries - complex(z) - self.t * m)
        return float(a.min()), float(a.max())

    def density(self, e, eta_reg):
        """Regularized density Im m_t(E + i eta_reg) / pi, >= 0."""
        if eta_reg <= 0:
            raise ValueError("eta_reg must be > 0")
        return max(self.solve_m(complex(e, eta_reg)).imag / np.pi, 0.0)

    def density_grid(self, xs, eta_reg, richardson=True):
        """Density on a grid of energies.

        With ``richardson=True`` the linear-in-eta smoothing bias (and the
        spurious Lorentzian tails outside the support) are cancelled by
        extrapolating from eta_reg and 2*eta_reg.
        """
        xs = np.asarray(xs, dtype=float)
        r1 = self.solve_grid(xs + 1j * eta_reg).imag
        if not richardson:
            return np.clip(r1 / np.pi, 0.0, None)
        r2 = self.solve_grid(xs + 2j * eta_reg).imag
        return np.clip((2.0 * r1 - r2) / np.pi, 0.0, None)

    def _default_eta_reg(self):
        return min(1e-4, self.t / 100.0) if self.t > 0 else 1e-6

    def quantiles(self, n=None):
        """Quantiles gamma_{1..N} of rho_t: cumulative mass at gamma_i equals i/N.

        Uses Simpson integration of the regularized density on a grid covering
        [D_min - 3 sqrt(t), D_max + 3 sqrt(t)], then monotone inversion; the
        sequence is strictly increasing wherever the density is positive.
        t = 0 returns the sorted atoms themselves.
        """
        N = self.potential.n if n is None else int(n)
        if self._quantiles is not None and self._quantiles.size == N:
            return self._quantiles
        D = self.potential.entries
        if self.t == 0.0:
            gam = np.sort(D) if N == D.size else np.quantile(D, (np.arange(1, N + 1)) / N)
            self._quantiles = gam
            self._quantile_residual = 0.0
            return gam
        pad = 3.0 * np.sqrt(self.t)
        lo, hi = D[0] - pad, D[-1] + pad
        h = min(self.t, 1.0) / 32.0
        npts = int(np.ceil((hi - lo) / h)) + 1
        npts = min(max(npts, 3201), 24001)
        npts += (npts + 1) % 2  # odd point count for Simpson
        xs = np.linspace(lo, hi, npts)
        eta_reg = self._default_eta_reg()
        rho = self.density_grid(xs, eta_reg)
        cdf = cumulative_simpson(rho, x=xs, initial=0.0)
        # error estimate: compare against the half-resolution integral
        cdf_coarse = cumulative_simpson(rho[::2], x=xs[::2], initial=0.0)
        est = abs(cdf[-1] - cdf_coarse[-1]) + abs(cdf[-1] - 1.0)
        if est > self.quad_tol:
            raise QuadratureError(
                f"quantile quadrature residual {est:.2e} exceeds {self.quad_tol:.2e}",
                residual=est)
        cdf = cdf + np.arange(npts) * 1e-15  # break exact ties in the flat tails
        frac = np.arange(1, N + 1) / N
        gam = np.interp(np.clip(frac, cdf[0], cdf[-1]), cdf, xs)
        # the inversion is ill-posed where the density vanishes: pin the extreme
        # quantiles to the numerically-supported region
        live = np.nonzero(rho > 1e-9 * rho.max())[0]
        gam = np.clip(gam, xs[live[0]], xs[live[-1]])
        self._quantiles = gam
        self._quantile_residual = est
        return gam

    @property
    def quantile_residual(self):
        return self._quantile_residual

    def variance_profile_basis(self, k, eta):
        """sigma_t^2(e_alpha, k, eta) for every canonical direction alpha.

        k is the 1-based bulk index of the quantile gamma_{k,t}.  The caller
        is responsible for keeping eta inside the admissible window (the
        experiment layer flags out-of-window overrides; any eta of smaller
        order than t is meaningful).
        """
        if self.t <= 0:
            raise ValueError("variance profile requires t > 0")
        if eta <= 0:
            raise ValueError("eta must be > 0")
        gam = self.quantiles()
        g = gam[int(k) - 1]
        b = self.t * self.solve_m(complex(g, eta)).imag
        return self.t / ((self.potential.entries - g) ** 2 + b * b)

    def variance_profile(self, q, k, eta):
        """sigma_t^2(q, k, eta) for a unit direction q (Cauchy-shaped in D_alpha)."""
        q = np.asarray(q, dtype=float)
        nrm = float(np.dot(q, q))
        if abs(nrm - 1.0) > 1e-8:
            raise ValueError("q must be a unit vector")
        return float(np.dot(q * q, self.variance_profile_basis(k, eta)))


def check_regularity(potential, e0, eta_star, r, n_energy=41, n_eta=41):
    """Scan Im m_D over [E0 - r, E0 + r] x [eta_star, 10], return (c_D, C_D).

    c_D / C_D are the observed min / max; the caller decides whether they
    certify regularity (c_D bounded away from 0, C_D bounded above).
    """
    if eta_star <= 0 or r <= 0:
        raise ValueError("eta_star and r must be > 0")
    es = np.linspace(e0 - r, e0 + r, n_energy)
    etas = np.geomspace(eta_star, 10.0, n_eta)
    z = es[:, None] + 1j * etas[None, :]
    im = potential.stieltjes(z).imag
    return float(im.min()), float(im.max())

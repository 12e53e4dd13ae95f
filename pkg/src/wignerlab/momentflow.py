"""Multi-particle jump dynamics for eigenvector moments, and its continuum kernel.

Configurations place n particles on a window of sites; one particle hops
i -> j at rate

    r(eta -> eta^{i,j}) = 2 eta_i (1 + 2 eta_j) / (N (lam_i - lam_j)^2),

which is reversible for pi(eta) = prod_k a(2 eta_k) / (2^eta_k eta_k!) with
a(2n) = (2n-1)!! the Gaussian moment table.  The generator can be restricted
to short range (|i - j| <= ell), its complement, or kept full; jumps leaving
the window either freeze at a reference value ("absorb") or are dropped
("reflect").

The continuum analogue on [-2, 2] is (Kf)(x) = int (f(x) - f(y))/(x - y)^2
drho_sc(y), whose relaxation semigroup e^{-tau K} has the explicit kernel
``kernel_pt``; at small times the kernel is Cauchy-shaped with width ~ t.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .freeconv import semicircle_density


# ---------------------------------------------------------------------------
# normalization table and reversible measure

def gaussian_moment(n):
    """a(n) = product of odd k <= n; a(2m) is the 2m-th standard normal moment."""
    out = 1
    for k in range(1, n + 1, 2):
        out *= k
    return out


def matching_count(eta_counts):
    """Number of perfect matchings induced by a configuration: prod (2 eta_i - 1)!!."""
    out = 1
    for c in eta_counts:
        out *= gaussian_moment(2 * c)
    return out


def reversible_measure(config):
    """pi(eta) = prod_k a(2 eta_k) / (2^eta_k eta_k!) over occupied sites."""
    out = 1.0
    for _, c in _site_counts(config).items():
        out *= gaussian_moment(2 * c) / (2.0 ** c * math.factorial(c))
    return out


def _site_counts(config):
    counts = {}
    for s in config:
        counts[s] = counts.get(s, 0) + 1
    return counts


def config_distance(a, b):
    """d(eta, xi) = sum over ranked particles of |x_(alpha) - y_(alpha)|."""
    if len(a) != len(b):
        raise ValueError("configurations must carry the same particle number")
    return int(sum(abs(x - y) for x, y in zip(sorted(a), sorted(b))))


# ---------------------------------------------------------------------------
# configuration space


@dataclass(frozen=True)
class ConfigSpace:
    """Complete enumeration of n-particle configurations on a site window.

    Configurations are tuples of sorted global site indices; the enumeration
    order (combinations with replacement) is stable, and the size equals the
    multiset count C(|window| + n - 1, n).
    """

    window: tuple
    n: int
    configs: tuple
    index: dict

    @property
    def size(self):
        return len(self.configs)

    def locate(self, config):
        return self.index[tuple(sorted(config))]

    def distances_from(self, config):
        ref = tuple(sorted(config))
        return np.array([config_distance(c, ref) for c in self.configs])

    def to_rows(self, values):
        """Rows {config index, site..., value} for CSV export."""
        return [(i,) + c + (float(v),) for i, (c, v) in enumerate(zip(self.configs, values))]


def enumerate_configs(window, n, cap=200_000):
    """Build the n-particle space over ``window`` (an iterable of site indices)."""
    window = tuple(window)
    if n < 1:
        raise ValueError("n must be >= 1")
    size = math.comb(len(window) + n - 1, n)
    if size > cap:
        raise ValueError(f"configuration space would hold {size} > cap {cap} states")
    configs = tuple(itertools.combinations_with_replacement(window, n))
    index = {c: i for i, c in enumerate(configs)}
    return ConfigSpace(window=window, n=n, configs=configs, index=index)


# ---------------------------------------------------------------------------
# generators


@dataclass
class FlowGenerator:
    """Sparse jump generator over a ConfigSpace (plus an optional absorbing state).

    ``matrix`` acts on observable vectors f (rows sum to zero); when the
    boundary policy is "absorb" the last state collects jumps leaving the
    window and stays frozen at the reference value.
    """

    space: ConfigSpace
    lam: np.ndarray
    ell: float
    complement: bool
    boundary: str
    matrix: sp.csr_matrix
    absorbing: bool

    @property
    def dim(self):
        return self.matrix.shape[0]

    def extend(self, f, reference=0.0):
        """Pad an observable over configs with the frozen boundary value."""
        f = np.asarray(f, dtype=float)
        if not self.absorbing:
            return f.copy()
        return np.concatenate([f, [reference]])

    def max_diagonal(self):
        return float(np.max(-self.matrix.diagonal())) if self.dim else 0.0

    def with_environment(self, lam):
        return build_generator(self.space, lam, ell=self.ell,
                               complement=self.complement, boundary=self.boundary)


def _in_range(i, j, ell, complement):
    d = abs(i - j)
    if d == 0:
        return False
    return (d > ell) if complement else (d <= ell)


def build_generator(space, lam, ell=np.inf, complement=False, boundary="absorb"):
    """Assemble the jump generator for eigenvalue snapshot ``lam``.

    ell = inf gives the full generator; finite ell keeps |i - j| <= ell
    (complement=True keeps the long-range part instead).  Eigenvalues must be
    strictly separated on the window plus the reachable halo.
    """
    if boundary not in ("absorb", "reflect"):
        raise ValueError("boundary must be 'absorb' or 'reflect'")
    lam = np.asarray(lam, dtype=float)
    n_amb = lam.size
    wmin, wmax = min(space.window), max(space.window)
    halo = n_amb if np.isinf(ell) or complement else int(ell)
    lo = max(0, wmin - halo)
    hi = min(n_amb - 1, wmax + halo)
    seg = lam[lo:hi + 1]
    if np.any(np.diff(seg) <= 0):
        raise ValueError("coincident eigenvalues on the window/halo")
    window_set = set(space.window)
    absorbing = boundary == "absorb"
    dim = space.size + (1 if absorbing else 0)
    sink = space.size
    rows, cols, vals = [], [], []
    for idx, config in enumerate(space.configs):
        counts = _site_counts(config)
        diag = 0.0
        for i, ci in counts.items():
            for j in range(lo, hi + 1):
                if not _in_range(i, j, ell, complement):
                    continue
                cj = counts.get(j, 0)
                rate = 2.0 * ci * (1.0 + 2.0 * cj) / (n_amb * (lam[i] - lam[j]) ** 2)
                if j in window_set:
                    moved = list(config)
                    moved.remove(i)
                    moved.append(j)
                    tgt = space.index[tuple(sorted(moved))]
                    rows.append(idx)
                    cols.append(tgt)
                    vals.append(rate)
                    diag -= rate
                elif absorbing:
                    rows.append(idx)
                    cols.append(sink)
                    vals.append(rate)
                    diag -= rate
                # reflect: out-of-window jumps carry no rate
        rows.append(idx)
        cols.append(idx)
        vals.append(diag)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))
    return FlowGenerator(space=space, lam=lam, ell=ell, complement=complement,
                         boundary=boundary, matrix=mat, absorbing=absorbing)


def detailed_balance_residual(gen):
    """Max relative defect of pi(eta) r(eta->xi) = pi(xi) r(xi->eta) over edges."""
    space = gen.space
    coo = gen.matrix.tocoo()
    pi = np.array([reversible_measure(c) for c in space.configs])
    worst = 0.0
    m = gen.matrix
    for r, c, v in zip(coo.row, coo.col, coo.data):
        if r == c or r >= space.size or c >= space.size:
            continue
        lhs = pi[r] * v
        rhs = pi[c] * m[c, r]
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst


# ---------------------------------------------------------------------------
# evolution


class StiffnessError(RuntimeError):
    pass


def evolve(gen, f0, tau, lam_path=None, reference=0.0, n_steps=None,
           refresh=8, assert_monotone=True, step_cap=2_000_000):
    """Integrate d f / ds = (generator) f for time tau (classical RK4).

    ``lam_path``, when given, is a callable s -> eigenvalue snapshot applied
    piecewise-constant over ``refresh`` segments.  The step obeys
    h <= 0.5 / max|diagonal rate|; the maximum principle (max of f
    non-increasing, min non-decreasing) is asserted after every step.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    f = gen.extend(f0, reference)
    if tau == 0:
        return f[:gen.space.size]
    segments = 1 if lam_path is None else int(refresh)
    seg = tau / segments
    slack = 1e-9 * (np.max(f) - np.min(f) + 1.0)
    g = gen
    for k in range(segments):
        if lam_path is not None:
            g = gen.with_environment(lam_path(k * seg))
        rate = g.max_diagonal()
        steps = n_steps if n_steps is not None else max(1, int(np.ceil(seg * rate / 0.25)))
        if steps > step_cap:
            raise StiffnessError(f"environment too stiff: {steps} steps needed for one segment")
        h = seg / steps
        if rate > 0 and h > 0.5 / rate:
            h = 0.5 / rate
            steps = int(np.ceil(seg / h))
            h = seg / steps
        m = g.matrix
        for _ in range(steps):
            hi, lo = np.max(f), np.min(f)
            k1 = m @ f
            k2 = m @ (f + 0.5 * h * k1)
            k3 = m @ (f + 0.5 * h * k2)
            k4 = m @ (f + h * k3)
            f = f + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if assert_monotone and (np.max(f) > hi + slack or np.min(f) < lo - slack):
                raise RuntimeError("maximum principle violated by the integrator step")
    return f[:g.space.size]


def transition_kernel(gen, config, tau):
    """Row of the semigroup started at ``config``: a distribution over states.

    Computed with the exact sparse matrix exponential; the returned vector is
    nonnegative to rounding and sums to one within 1e-10 (the absorbing
    entry, when present, is the final component).
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    start = np.zeros(gen.dim)
    start[gen.space.locate(config)] = 1.0
    if tau == 0:
        return start
    out = expm_multiply(gen.matrix.T.tocsr() * tau, start)
    return out


# ---------------------------------------------------------------------------
# flattening / averaging operators


def flatten(f, space, xi_w, a, reference):
    """Flat^a: keep f within distance a of xi_w, freeze to the reference outside."""
    d = space.distances_from(xi_w)
    f = np.asarray(f, dtype=float)
    return np.where(d <= a, f, reference)


def average_flatten(f, space, xi_w, u, reference):
    """Av: average Flat^a over window radii a in [u/2, u].

    Exact representation Av f(eta) = a_eta f(eta) + (1 - a_eta) reference with
    a_eta = clip(2 (u - d)/u, 0, 1); returns (Av f, a_eta).
    """
    if u <= 0:
        raise ValueError("u must be > 0")
    d = space.distances_from(xi_w).astype(float)
    a_eta = np.clip(2.0 * (u - d) / u, 0.0, 1.0)
    f = np.asarray(f, dtype=float)
    return a_eta * f + (1.0 - a_eta) * reference, a_eta


# ---------------------------------------------------------------------------
# Monte Carlo observables


def _batched(values, n_batches=20):
    values = np.asarray(values, dtype=float)
    m = values.size
    nb = min(n_batches, m)
    means = np.array([b.mean() for b in np.array_split(values, nb)])
    se = means.std(ddof=1) / np.sqrt(nb) if nb > 1 else 0.0
    return float(values.mean()), float(se)


def moment_observable(samples, q, config, n_batches=20):
    """Monte Carlo joint moment E[prod_k z_k^{2 eta_k} / a(2 eta_k)].

    ``samples`` is a sequence of SpectralSample; returns (estimate, standard
    error) with the standard error from >= 20 batch means.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample batch")
    counts = _site_counts(config)
    vals = []
    for s in samples:
        z = s.projections(q)
        v = 1.0
        for site, c in counts.items():
            zz = abs(z[site]) ** 2 if np.iscomplexobj(z) else float(z[site]) ** 2
            v *= zz ** c / gaussian_moment(2 * c)
        vals.append(v)
    return _batched(vals, n_batches)


def _perfect_matchings(vertices):
    if not vertices:
        yield ()
        return
    first, rest = vertices[0], vertices[1:]
    for i in range(len(rest)):
        pair = (first, rest[i])
        for tail in _perfect_matchings(rest[:i] + rest[i + 1:]):
            yield (pair,) + tail


def overlap_matrix(sample, subset, centering=0.0):
    """Centered overlaps p_ij = sum_{a in I} u_i(a) u_j(a) (diagonal shifted by C)."""
    u = np.real(sample.eigenvectors[np.asarray(subset), :])
    p = u.T @ u
    p[np.diag_indices_from(p)] -= centering
    return p


def matching_observable(samples, subset, config, centering=0.0, n_batches=20):
    """Perfect-matching observable: mean over samples of sum_G prod_e p(e) / M(eta).

    The vertex set holds 2 eta_i copies of each occupied site; n <= 6 keeps
    the (2n-1)!!-sized enumeration tractable.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample batch")
    counts = _site_counts(config)
    n = sum(counts.values())
    if n > 6:
        raise ValueError("matching observables support n <= 6 particles")
    vertices = tuple(itertools.chain.from_iterable([s] * (2 * c) for s, c in counts.items()))
    norm = matching_count(counts.values())
    matchings = list(_perfect_matchings(tuple(range(len(vertices)))))
    sites = sorted(counts)
    idx = np.asarray(subset)
    vals = []
    for s in samples:
        u = np.real(s.eigenvectors)
        pmat = {}
        for a in sites:
            for b in sites:
                if (a, b) not in pmat:
                    val = float(np.sum(u[idx, a] * u[idx, b]))
                    if a == b:
                        val -= centering
                    pmat[(a, b)] = val
                    pmat[(b, a)] = val
        total = 0.0
        for match in matchings:
            prod = 1.0
            for va, vb in match:
                prod *= pmat[(vertices[va], vertices[vb])]
            total += prod
        vals.append(total / norm)
    return _batched(vals, n_batches)


def holder_bound_configs(i, j, n):
    """The three n-particle configurations bounding E[p_ij^n]."""
    if n % 2:
        raise ValueError("n must be even")
    return ((i,) * n, (j,) * n, (i,) * (n // 2) + (j,) * (n // 2))


# ---------------------------------------------------------------------------
# continuum kernel


def kernel_pt(x, y, t):
    """Relaxation kernel of the continuum flow on (-2, 2).

    With x = 2 cos(theta), y = 2 cos(phi):

        p_t(x, y) = (1 - e^{-t}) /
            (|e^{i(theta+phi)} - e^{-t/2}|^2 |e^{i(theta-phi)} - e^{-t/2}|^2),

    a stochastic kernel against the semicircle law; p_t -> 1 as t -> infinity
    and p_t(x, y) ~ t / ((x-y)^2 + t^2) at small t near the diagonal.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(np.abs(x) >= 2.0) or np.any(np.abs(y) >= 2.0):
        raise ValueError("kernel arguments must lie strictly inside (-2, 2)")
    if t <= 0:
        raise ValueError("t must be > 0")
    th = np.arccos(x / 2.0)
    ph = np.arccos(y / 2.0)
    s = np.exp(-t / 2.0)
    a = 1.0 - 2.0 * s * np.cos(th + ph) + s * s
    b = 1.0 - 2.0 * s * np.cos(th - ph) + s * s
    return (1.0 - np.exp(-t)) / (a * b)


def chebyshev_u(n, x):
    """U_n(x/2): orthonormal family for the semicircle law on [-2, 2]."""
    th = np.arccos(np.clip(np.asarray(x, float) / 2.0, -1.0, 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sin((n + 1) * th) / np.sin(th)
    return np.where(np.isclose(np.sin(th), 0.0), (n + 1.0) * np.sign(np.cos(th)) ** n, out)


def gauss_chebyshev_nodes(n_nodes):
    """Nodes/weights integrating f against the semicircle law exactly for polynomials."""
    j = np.arange(1, n_nodes + 1)
    phi = j * np.pi / (n_nodes + 1)
    return 2.0 * np.cos(phi), 2.0 * np.sin(phi) ** 2 / (n_nodes + 1)


def kernel_mass(x, t, n_nodes=2000):
    """int p_t(x, y) drho_sc(y) via Gauss-Chebyshev quadrature (equals 1)."""
    y, w = gauss_chebyshev_nodes(n_nodes)
    return float(np.sum(w * kernel_pt(x, y, t)))


def apply_K(f, x, n_nodes=2000):
    """(Kf)(x) = int (f(x) - f(y)) / (x - y)^2 drho_sc(y) for smooth f.

    Quadrature pairs nodes symmetrically about x so the odd 1/(x - y)
    singularity cancels; the central cell gets the analytic correction
    -(f'(x) rho'(x) + f''(x) rho(x) / 2) * h.
    """
    if not -2.0 < x < 2.0:
        raise ValueError("x must lie strictly inside (-2, 2)")
    r = min(2.0 - x, x + 2.0)
    h = 4.0 / n_nodes
    # symmetric band around x, midpoint rule in the offset u
    m = max(int(np.floor((r - h / 2.0) / h)), 0)
    total = 0.0
    if m > 0:
        u = (np.arange(m) + 1.0) * h  # cell centers at h, 2h, ... (|u| <= r)
        for sgn in (+1.0, -1.0):
            yy = x + sgn * u
            inside = np.abs(yy) < 2.0
            gy = np.zeros_like(u)
            gy[inside] = (f(x) - f(yy[inside])) / (x - yy[inside]) ** 2 * semicircle_density(yy[inside])
            total += h * float(np.sum(gy))
    # central cell: analytic correction from the Taylor expansion at x
    dh = 1e-5
    fp = (f(x + dh) - f(x - dh)) / (2.0 * dh)
    fpp = (f(x + dh) - 2.0 * f(x) + f(x - dh)) / dh ** 2
    rho = float(semicircle_density(np.array(x)))
    rhop = -x / (2.0 * np.pi * np.sqrt(max(4.0 - x * x, 1e-300)))
    total += -(fp * rhop + fpp * rho / 2.0) * h
    # one-sided remainder beyond the symmetric band (regular integrand)
    lo, hi = x - r, x + r
    for a, b in ((-2.0, lo), (hi, 2.0)):
        if b - a > 1e-12:
            k = max(int(np.ceil((b - a) / h)), 4)
            yy = a + (np.arange(k) + 0.5) * (b - a) / k
            gy = (f(x) - f(yy)) / (x - yy) ** 2 * semicircle_density(yy)
            total += (b - a) / k * float(np.sum(gy))
    return total


# ---------------------------------------------------------------------------
# per-sample exponential identity


def exponential_identity(lam, zk, z, t, nmax=8):
    """Laplace-transform expansion of the renormalized resolvent, per sample.

    Returns (lhs, rhs, remainder_bound) where

        lhs = exp((e^{-t/2}/2) sum_k w_k / (lam_k - z)),
        rhs = sum_{n<=nmax} e^{-nt/2} sum_{|eta|=n}
              f(eta) pi(eta) / prod_k (lam_k - z)^{eta_k},

    with w_k = z_k^2 and the symmetric normalization f(eta) = prod
    w_k^{eta_k}/a(2 eta_k), pi(eta) = prod a(2 eta_k)/(2^{eta_k} eta_k!)
    (complex projections use |z_k|^2 and the flat measure with 2^n n!
    denominators).  The remainder bound is |S|^{nmax+1} e^{|S|} / (nmax+1)!.
    """
    lam = np.asarray(lam, dtype=float)
    n_sites = lam.size
    hermitian = np.iscomplexobj(zk)
    w = np.abs(zk) ** 2 if hermitian else np.asarray(zk, float) ** 2
    pole = lam - complex(z)
    s_val = 0.5 * np.exp(-t / 2.0) * np.sum(w / pole)
    lhs = np.exp(s_val)
    rhs = 0.0 + 0.0j
    for n in range(nmax + 1):
        for config in itertools.combinations_with_replacement(range(n_sites), n) if n else ((),):
            counts = _site_counts(config)
            term = np.exp(-n * t / 2.0)
            for site, c in counts.items():
                if hermitian:
                    term = term * w[site] ** c / (2.0 ** c * math.factorial(c)) / pole[site] ** c
                else:
                    term = term * (w[site] ** c / gaussian_moment(2 * c)) \
                        * (gaussian_moment(2 * c) / (2.0 ** c * math.factorial(c))) / pole[site] ** c
            rhs += term
    bound = abs(s_val) ** (nmax + 1) / math.factorial(nmax + 1) * np.exp(abs(s_val))
    return lhs, rhs, float(bound)

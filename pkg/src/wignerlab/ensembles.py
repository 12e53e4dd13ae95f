"""Random-matrix sampling and deterministic potentials.

Matrix entry conventions (variance 1/N for every entry, diagonal included)::

    gaussian    N(0, 1/N) entries; beta = 2 uses (x + iy)/sqrt(2N) off the
                diagonal with a real diagonal
    goe         Gaussian with the classical-ensemble diagonal (variance 2/N
                for beta = 1); identical to "gaussian" for beta = 2
    rademacher  +-1/sqrt(N)
    uniform     uniform on [-sqrt(3/N), sqrt(3/N)]
    smooth      a fixed smooth positive density exp(-Theta(x)) with
                Theta(x) = x^2/2 + log cosh x (standardized to unit variance),
                scaled by 1/sqrt(N)

All samplers are pure functions of (spec, seed); parallel sampling derives
disjoint Philox streams via :func:`stream`.

Matrix dump format (documented bit-exactly): 8-byte magic ``b"WLMX0001"``,
little-endian int64 N, little-endian int64 beta, then the N*N entries
row-major as little-endian float64 (beta = 1) or complex128 (beta = 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .freeconv import DiagonalPotential, semicircle_cdf

ENTRY_LAWS = ("gaussian", "goe", "rademacher", "uniform", "smooth")

DUMP_MAGIC = b"WLMX0001"

_MASK64 = (1 << 64) - 1


def stream(seed, index=0):
    """Independent counter-based generator for the (seed, index) pair.

    Philox keys are 128-bit; distinct (seed, index) pairs give statistically
    independent streams, so worker i can safely use ``stream(seed, i)``.
    """
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class EnsembleSpec:
    """What to sample: size, symmetry class, entry law, and the seed."""

    n: int
    beta: int = 1
    entry_law: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.beta not in (1, 2):
            raise ValueError("beta must be 1 or 2")
        if self.entry_law not in ENTRY_LAWS:
            raise ValueError(f"unknown entry law {self.entry_law!r}; choose from {ENTRY_LAWS}")


# ---------------------------------------------------------------------------
# the shipped smooth non-Gaussian law: density proportional to exp(-x^2/2)/cosh(x)

_SMOOTH_STD = None


def smooth_law_std():
    """Standard deviation of the raw exp(-x^2/2 - log cosh x) law (cached)."""
    global _SMOOTH_STD
    if _SMOOTH_STD is None:
        # exp(-x^2/2)/cosh(x) written overflow-free for large |x|
        dens = lambda x: 2.0 * np.exp(-0.5 * x * x - np.abs(x)) / (1.0 + np.exp(-2.0 * np.abs(x)))
        z0 = quad(dens, -np.inf, np.inf)[0]
        v = quad(lambda x: x * x * dens(x), -np.inf, np.inf)[0] / z0
        _SMOOTH_STD = np.sqrt(v)
    return _SMOOTH_STD


def sample_smooth_entries(rng, size, max_rounds=64):
    """Unit-variance draws from the smooth law by rejection from N(0, 1).

    The raw density is exp(-x^2/2)/cosh(x) (sub-Gaussian tails, all
    derivatives of Theta polynomially bounded); acceptance probability under
    a standard normal proposal is sech(x), about 0.79 on average, so the
    retry loop is bounded in practice and capped at ``max_rounds``.
    """
    out = np.empty(size, dtype=float)
    have = 0
    for _ in range(max_rounds):
        need = size - have
        prop = rng.standard_normal(int(need * 1.4) + 16)
        keep = prop[rng.random(prop.size) < 1.0 / np.cosh(prop)]
        take = min(keep.size, need)
        out[have:have + take] = keep[:take]
        have += take
        if have == size:
            return out / smooth_law_std()
    raise RuntimeError("rejection sampler exhausted its retry budget")


def _draw(rng, law, size):
    if law in ("gaussian", "goe"):
        return rng.standard_normal(size)
    if law == "rademacher":
        return rng.integers(0, 2, size) * 2.0 - 1.0
    if law == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
    if law == "smooth":
        return sample_smooth_entries(rng, size)
    raise ValueError(f"unknown entry law {law!r}")


def sample_wigner(spec):
    """Sample one mean-field matrix with independent entries of variance 1/N.

    The returned matrix is exactly symmetric (beta = 1) or Hermitian
    (beta = 2) bit-for-bit.  Entry law "goe" uses the classical diagonal
    variance 2/N so both diagonal conventions are testable.
    """
    n, law = spec.n, spec.entry_law
    rng = stream(spec.seed)
    iu = np.triu_indices(n, k=1)
    if spec.beta == 1:
        h = np.zeros((n, n))
        h[iu] = _draw(rng, law, iu[0].size) / np.sqrt(n)
        h = h + h.T
        diag = _draw(rng, law, n) / np.sqrt(n)
        if law == "goe":
            diag *= np.sqrt(2.0)
        h[np.diag_indices(n)] = diag
        return h
    h = np.zeros((n, n), dtype=complex)
    re = _draw(rng, law, iu[0].size)
    im = _draw(rng, law, iu[0].size)
    h[iu] = (re + 1j * im) / np.sqrt(2.0 * n)
    h = h + h.conj().T
    h[np.diag_indices(n)] = _draw(rng, law, n) / np.sqrt(n)
    return h


def sample_smooth_wigner(spec):
    """Sampler restricted to the smooth non-Gaussian law."""
    if spec.entry_law != "smooth":
        raise ValueError("sample_smooth_wigner requires entry_law='smooth'")
    return sample_wigner(spec)


def sample_gaussian_noise(n, beta=1, seed=0, index=0, rng=None):
    """One classical-ensemble noise matrix (GOE/GUE convention) for flows."""
    if rng is None:
        rng = stream(seed, index)
    iu = np.triu_indices(n, k=1)
    if beta == 1:
        g = np.zeros((n, n))
        g[iu] = rng.standard_normal(iu[0].size) / np.sqrt(n)
        g = g + g.T
        g[np.diag_indices(n)] = rng.standard_normal(n) * np.sqrt(2.0 / n)
        return g
    g = np.zeros((n, n), dtype=complex)
    g[iu] = (rng.standard_normal(iu[0].size) + 1j * rng.standard_normal(iu[0].size)) / np.sqrt(2.0 * n)
    g = g + g.conj().T
    g[np.diag_indices(n)] = rng.standard_normal(n) / np.sqrt(n)
    return g


def deform(potential, t, w):
    """The deformed matrix diag(D) + sqrt(t) * W."""
    if t < 0:
        raise ValueError("t must be >= 0")
    d = potential.entries
    if w.shape != (d.size, d.size):
        raise ValueError(f"dimension mismatch: potential {d.size}, matrix {w.shape}")
    return np.diag(d).astype(w.dtype) + np.sqrt(t) * w


# ---------------------------------------------------------------------------
# potentials


def semicircle_quantiles(n):
    """mu_1..mu_N with semicircle mass i/N to the left of mu_i (mu_N = 2)."""
    out = np.empty(n)
    for i in range(1, n + 1):
        out[i - 1] = brentq(lambda x, f=i / n: semicircle_cdf(x) - f, -2.0, 2.0, xtol=1e-14)
    return out


def build_potential(kind, n=None, params=None):
    """Construct a named potential.

    kind is one of "semicircle" (alias "semicircle-quantiles"), "equispaced"
    with params (a, b), "zero", or "file" with params = path (one real per
    line).  Entries come back sorted.
    """
    if kind in ("semicircle", "semicircle-quantiles"):
        return DiagonalPotential(semicircle_quantiles(int(n)), label="semicircle")
    if kind == "equispaced":
        a, b = params
        return DiagonalPotential(np.linspace(float(a), float(b), int(n)), label=f"equispaced[{a},{b}]")
    if kind == "zero":
        return DiagonalPotential(np.zeros(int(n)), label="zero")
    if kind == "file":
        vals = np.sort(np.loadtxt(params, dtype=float, ndmin=1))
        return DiagonalPotential(vals, label=f"file:{params}")
    raise ValueError(f"unknown potential kind {kind!r}")


def parse_potential(name, n):
    """Parse a potential name like "semicircle", "zero", "equispaced[-1,1]"
    or "file:path/to.txt"."""
    if name.startswith("equispaced[") and name.endswith("]"):
        a, b = (float(s) for s in name[len("equispaced["):-1].split(","))
        return build_potential("equispaced", n, (a, b))
    if name.startswith("file:"):
        return build_potential("file", params=name[5:])
    return build_potential(name, n)


def save_potential(path, potential):
    np.savetxt(path, potential.entries, fmt="%.17g")


# ---------------------------------------------------------------------------
# diagonalization


@dataclass
class SpectralSample:
    """Eigenvalues (ascending) and orthonormal eigenvector columns of one draw."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    origin: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.eigenvalues.size

    def validate(self, ortho_tol=1e-10):
        if np.any(np.diff(self.eigenvalues) < 0):
            raise ValueError("eigenvalues not ascending")
        u = self.eigenvectors
        gram = u.conj().T @ u
        res = np.max(np.abs(gram - np.eye(u.shape[1])))
        if res > ortho_tol:
            raise ValueError(f"orthonormality residual {res:.2e} > {ortho_tol:.0e}")
        return res

    def projections(self, q):
        """z_k = sqrt(N) <q, u_k> for a fixed direction q."""
        return np.sqrt(self.n) * (self.eigenvectors.conj().T @ q)


def fix_phases(u):
    """Pin the eigenvector phase: largest-magnitude coordinate positive real."""
    idx = np.argmax(np.abs(u), axis=0)
    lead = u[idx, np.arange(u.shape[1])]
    if np.iscomplexobj(u):
        phase = lead / np.abs(lead)
        return u * phase.conj()[None, :]
    return u * np.sign(lead)[None, :]


def diagonalize(h, origin=None, check=False):
    """Full eigendecomposition with ascending eigenvalues and pinned phases.

    With check=True the orthonormality (<= 1e-10) and the reconstruction
    residual (<= 1e-8 * max|H|) are verified explicitly.
    """
    if not np.all(np.isfinite(h)):
        raise ValueError("matrix has non-finite entries")
    lam, u = np.linalg.eigh(h)
    u = fix_phases(u)
    sample = SpectralSample(lam, u, dict(origin or {}))
    if check:
        sample.validate()
        rec = u @ np.diag(lam) @ u.conj().T
        scale = max(np.max(np.abs(h)), 1e-300)
        res = np.max(np.abs(rec - h)) / scale
        if res > 1e-8:
            raise ValueError(f"reconstruction residual {res:.2e} > 1e-8")
    return sample


# ---------------------------------------------------------------------------
# matrix dump IO


def save_matrix(path, h, beta=None):
    """Write the binary dump: magic, int64 N, int64 beta, row-major entries."""
    if beta is None:
        beta = 2 if np.iscomplexobj(h) else 1
    n = h.shape[0]
    with open(path, "wb") as f:
        f.write(DUMP_MAGIC)
        np.array([n, beta], dtype="<i8").tofile(f)
        if beta == 1:
            np.ascontiguousarray(h, dtype="<f8").tofile(f)
        else:
            np.ascontiguousarray(h, dtype="<c16").tofile(f)


def load_matrix(path):
    """Read a matrix dump; returns (matrix, beta)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != DUMP_MAGIC:
            raise ValueError(f"bad magic {magic!r} (expected {DUMP_MAGIC!r})")
        n, beta = np.fromfile(f, dtype="<i8", count=2)
        dtype = "<f8" if beta == 1 else "<c16"
        h = np.fromfile(f, dtype=dtype, count=n * n).reshape(n, n)
    return h, int(beta)

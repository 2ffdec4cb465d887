"""Densities, 1D optimal transport and the continuum side of the particle scheme."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from ._quad import integrate_pieces
from .energy import EnergyModel
from .errors import CertificateError, DegenerateConfigurationError, OutOfRangeError
from .particles import DomainSpec, ParticleConfig

__all__ = [
    "DensityProfile",
    "SmoothSetCertificate",
    "Interpolant",
    "Recovery",
    "certify_smooth",
    "block_density",
    "wasserstein_p",
    "continuum_energy",
    "fisher_information",
    "recovery_sequence",
    "interpolant",
    "uniform_density",
    "cosine_bump",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class DensityProfile:
    """A probability density on a bounded interval with CDF and quantile.

    Two representations share one interface:

    * grid: piecewise linear through ``(xs, vals)``; repeated nodes encode
      jumps, so piecewise-constant densities are grids too;
    * function: a vectorized callable on ``support`` with an optional exact
      derivative; the CDF is tabulated on Gauss-Legendre panels.

    Use :meth:`from_grid` or :meth:`from_function`.
    """

    def __init__(self, kind, support, breakpoints, mass):
        self.kind = kind
        self.support = (float(support[0]), float(support[1]))
        self.breakpoints = breakpoints
        self.mass = mass

    # -- construction -----------------------------------------------------

    @classmethod
    def from_grid(cls, xs, vals, *, normalize: bool = True) -> "DensityProfile":
        xs = np.asarray(xs, dtype=float).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if xs.size != vals.size or xs.size < 2:
            raise ValueError("grid needs matching xs and vals with at least two nodes")
        if np.any(np.diff(xs) < 0) or not np.all(np.isfinite(xs)):
            raise ValueError("grid nodes must be finite and non-decreasing")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite and non-negative")
        seg = np.diff(xs) > 0
        sa, sb = xs[:-1][seg], xs[1:][seg]
        va, vb = vals[:-1][seg], vals[1:][seg]
        if sa.size == 0:
            raise ValueError("grid has zero length")
        masses = 0.5 * (va + vb) * (sb - sa)
        mass = float(masses.sum())
        if mass <= 0:
            raise ValueError("density has zero mass")
        if normalize:
            va, vb, masses = va / mass, vb / mass, masses / mass
        self = cls("grid", (xs[0], xs[-1]), np.unique(xs), mass)
        self._sa, self._sb, self._va, self._vb = sa, sb, va, vb
        self._cum = np.concatenate(([0.0], np.cumsum(masses)))
        self._total = float(self._cum[-1])
        return self

    @classmethod
    def from_function(
        cls,
        pdf: Callable,
        support: Sequence[float],
        dpdf: Optional[Callable] = None,
        *,
        n_panels: int = 512,
        normalize: bool = True,
        kinks: Sequence[float] = (),
    ) -> "DensityProfile":
        """``kinks`` lists interior points where ``pdf`` or ``dpdf`` is not smooth;
        quadrature panels never straddle them."""
        a, b = float(support[0]), float(support[1])
        if not (np.isfinite(a) and np.isfinite(b) and b > a):
            raise ValueError("support must be a finite interval")
        kinks = np.asarray(kinks, dtype=float)
        kinks = kinks[(kinks > a) & (kinks < b)]
        nodes = np.union1d(np.linspace(a, b, n_panels + 1), kinks)
        panel = integrate_pieces(lambda x, k: pdf(x), nodes[:-1], nodes[1:], rtol=1e-13)
        if np.any(panel < -1e-300):
            raise ValueError("density must be non-negative")
        mass = float(panel.sum())
        if mass <= 0:
            raise ValueError("density has zero mass")
        c = 1.0 / mass if normalize else 1.0
        self = cls("function", (a, b), np.union1d([a, b], kinks), mass)
        self._f = pdf
        self._df = dpdf
        self._c = c
        self._nodes = nodes
        self._cum = np.concatenate(([0.0], np.cumsum(panel))) * c
        self._total = float(self._cum[-1])
        return self

    # -- evaluation -------------------------------------------------------

    def _seg_index(self, x):
        return np.clip(np.searchsorted(self._sa, x, side="right") - 1, 0, self._sa.size - 1)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.support
        inside = (x >= a) & (x <= b)
        if self.kind == "grid":
            k = self._seg_index(x)
            sa, sb = self._sa[k], self._sb[k]
            t = np.clip((x - sa) / (sb - sa), 0.0, 1.0)
            val = self._va[k] + (self._vb[k] - self._va[k]) * t
        else:
            val = self._c * self._f(np.clip(x, a, b))
        return np.where(inside, val, 0.0)

    def dpdf(self, x):
        """Derivative of the density (segment slope for grids; exact or
        central differences for functions)."""
        x = np.asarray(x, dtype=float)
        a, b = self.support
        inside = (x >= a) & (x <= b)
        if self.kind == "grid":
            k = self._seg_index(x)
            val = (self._vb[k] - self._va[k]) / (self._sb[k] - self._sa[k])
        elif self._df is not None:
            val = self._c * self._df(np.clip(x, a, b))
        else:
            h = 1e-6 * (b - a)
            lo = np.clip(x - h, a, b)
            hi = np.clip(x + h, a, b)
            val = self._c * (self._f(hi) - self._f(lo)) / (hi - lo)
        return np.where(inside, val, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.support
        xc = np.clip(x, a, b)
        if self.kind == "grid":
            k = self._seg_index(xc)
            L = self._sb[k] - self._sa[k]
            t = np.clip(xc - self._sa[k], 0.0, L)
            val = self._cum[k] + self._va[k] * t + 0.5 * (self._vb[k] - self._va[k]) * t * t / L
        else:
            k = np.clip(np.searchsorted(self._nodes, xc, side="right") - 1, 0, self._nodes.size - 2)
            left = self._nodes[k]
            half = 0.5 * (xc - left)
            pts = (left + half)[..., None] + half[..., None] * _GL_NODES
            val = self._cum[k] + half * (self._c * self._f(pts) @ _GL_WEIGHTS)
        return np.where(x <= a, 0.0, np.where(x >= b, self._total, val))

    def quantile(self, s):
        """Left-continuous quantile ``Q(s) = inf {x : F(x) >= s}``."""
        s_arr = np.asarray(s, dtype=float)
        if np.any((s_arr < 0) | (s_arr > 1 + 1e-12)) or not np.all(np.isfinite(s_arr)):
            raise OutOfRangeError("quantile level must lie in [0, 1]")
        s_arr = np.minimum(s_arr * self._total, self._total)
        if self.kind == "grid":
            k = np.clip(np.searchsorted(self._cum[1:], s_arr, side="left"), 0, self._sa.size - 1)
            r = np.maximum(s_arr - self._cum[k], 0.0)
            L = self._sb[k] - self._sa[k]
            a1 = self._va[k]
            a2 = 0.5 * (self._vb[k] - self._va[k]) / L
            disc = np.sqrt(np.maximum(a1 * a1 + 4.0 * a2 * r, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(r > 0, 2.0 * r / (a1 + disc), 0.0)
            t = np.clip(np.nan_to_num(t, nan=0.0), 0.0, L)
            return self._sa[k] + t
        return self._function_quantile(s_arr)

    def _function_quantile(self, s):
        nodes = self._nodes
        k = np.clip(np.searchsorted(self._cum[1:], s, side="left"), 0, nodes.size - 2)
        lo, hi = nodes[k].copy(), nodes[k + 1].copy()
        x = 0.5 * (lo + hi)
        for _ in range(100):
            F = self.cdf(x) - s
            lo = np.where(F < 0, x, lo)
            hi = np.where(F >= 0, x, hi)
            d = self.pdf(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = x - F / d
            ok = (d > 0) & (newton > lo) & (newton < hi)
            x_new = np.where(ok, newton, 0.5 * (lo + hi))
            if np.all(np.abs(x_new - x) <= 1e-15 * np.maximum(1.0, np.abs(x))) or np.all(hi - lo < 1e-15):
                x = x_new
                break
            x = x_new
        return x

    def sample_grid(self, n: int = 2001) -> np.ndarray:
        a, b = self.support
        return np.union1d(np.linspace(a, b, n), self.breakpoints)

    def rows(self, xs=None):
        """``(x, rho(x))`` rows for CSV export."""
        xs = self.sample_grid() if xs is None else np.asarray(xs, dtype=float)
        return list(zip(xs.tolist(), self.pdf(xs).tolist()))

    def quantile_rows(self, n: int = 1001):
        s = np.linspace(0.0, 1.0, n)
        return list(zip(s.tolist(), self.quantile(s).tolist()))

    def moment(self, p: float) -> float:
        return _integrate_density(self, lambda y: np.abs(y) ** p)

    def __repr__(self):
        return f"DensityProfile(kind={self.kind!r}, support={self.support})"


def _density_pieces(rho: DensityProfile, extra=()):
    pts = np.union1d(rho.breakpoints, np.asarray(extra, dtype=float))
    a, b = rho.support
    pts = pts[(pts >= a) & (pts <= b)]
    if rho.kind == "function":
        pts = np.union1d(pts, rho._nodes[:: max(1, rho._nodes.size // 64)])
    return pts[:-1], pts[1:]


def _integrate_density(rho: DensityProfile, g: Callable, rtol=1e-12) -> float:
    a, b = _density_pieces(rho)
    return float(np.sum(integrate_pieces(lambda x, k: g(x) * rho.pdf(x), a, b, rtol=rtol)))


def uniform_density(a: float = -1.0, b: float = 1.0) -> DensityProfile:
    return DensityProfile.from_grid([a, b], [1.0, 1.0])


def cosine_bump(l: float = 1.0, amplitude: float = 0.5) -> DensityProfile:
    """``rho ∝ 1 + amplitude cos(pi x / l)`` on ``[-l, l]``.

    Strictly positive for ``amplitude < 1``; at ``amplitude = 1`` it vanishes
    at the walls and falls outside the smooth set.
    """
    if not 0 <= amplitude <= 1:
        raise ValueError("amplitude must lie in [0, 1]")
    k = np.pi / l
    return DensityProfile.from_function(
        lambda x: 1.0 + amplitude * np.cos(k * x),
        (-l, l),
        lambda x: -amplitude * k * np.sin(k * x),
    )


# ---------------------------------------------------------------------------
# smooth set, block density, recovery


@dataclass(frozen=True)
class SmoothSetCertificate:
    r: float
    min_density: float
    c1_flag: bool


def certify_smooth(rho: DensityProfile, *, tol: float = 1e-12, n: int = 4001) -> SmoothSetCertificate:
    """Check ``supp rho = [-r, r]`` with a positive density minimum."""
    a, b = rho.support
    if abs(a + b) > tol * max(1.0, b - a):
        raise CertificateError(f"support [{a:g}, {b:g}] is not symmetric")
    xs = rho.sample_grid(n)
    vals = rho.pdf(xs)
    if rho.kind == "grid":
        # right limits at repeated nodes
        vals = np.minimum(vals, rho.pdf(np.nextafter(xs, b)))
    m = float(np.min(vals))
    if not m > 0:
        raise CertificateError("density vanishes on its support; well-preparedness cannot be certified")
    if rho.kind == "grid":
        c1 = rho._sa.size == 1 or bool(np.allclose(np.diff((rho._vb - rho._va) / (rho._sb - rho._sa)), 0.0))
    else:
        c1 = bool(np.all(np.isfinite(rho.dpdf(xs))))
    return SmoothSetCertificate(float(b), m, c1)


class Recovery(NamedTuple):
    config: ParticleConfig
    a1: float
    a2: float


def recovery_sequence(rho: DensityProfile, N: int, certificate: Optional[SmoothSetCertificate] = None) -> Recovery:
    """Well-prepared particles at the midpoint quantiles of ``rho``.

    ``x_i = Q((2i - 1) / (2N))`` with the end particles moved onto the
    walls ``-r`` and ``r``; the configuration lives on the pinned interval
    ``[-r, r]``.  ``a1``/``a2`` are ``N`` times the smallest/largest gap.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    cert = certificate or certify_smooth(rho)
    r = cert.r
    s = (2.0 * np.arange(1, N + 1) - 1.0) / (2.0 * N)
    x = rho.quantile(s)
    x[0], x[-1] = -r, r
    cfg = ParticleConfig(x, DomainSpec.interval(r, pinned=True), sort=False)
    gaps = cfg.interior_gaps
    return Recovery(cfg, float(N * gaps.min()), float(N * gaps.max()))


def block_density(cfg: ParticleConfig) -> DensityProfile:
    """``(1/N) sum_i chi_{B_i} / |B_i|`` with ``B_i`` centred at ``x_i`` of width ``r_i``."""
    x = cfg.positions
    r = cfg.ball_sizes
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise DegenerateConfigurationError("blocks need finite positive widths")
    N = cfg.N
    lo, hi = x - 0.5 * r, x + 0.5 * r
    height = 1.0 / (N * r)
    xs = np.column_stack((lo, lo, hi, hi)).ravel()
    vals = np.column_stack((np.zeros(N), height, height, np.zeros(N))).ravel()
    return DensityProfile.from_grid(xs, vals, normalize=False)


# ---------------------------------------------------------------------------
# Wasserstein distances


Measure = Union[DensityProfile, ParticleConfig, np.ndarray, Sequence[float]]


def _atoms(m) -> Optional[np.ndarray]:
    if isinstance(m, DensityProfile):
        return None
    if isinstance(m, ParticleConfig):
        return m.positions
    arr = np.sort(np.asarray(m, dtype=float).ravel())
    if arr.size == 0:
        raise ValueError("empty particle set")
    return arr


def _wp_atoms(x: np.ndarray, y: np.ndarray, p: float) -> float:
    if x.size == y.size:
        return float(np.mean(np.abs(x - y) ** p))
    # merge of the two step quantile functions
    s = np.union1d(np.arange(x.size + 1) / x.size, np.arange(y.size + 1) / y.size)
    mid = 0.5 * (s[:-1] + s[1:])
    ix = np.minimum((mid * x.size).astype(int), x.size - 1)
    iy = np.minimum((mid * y.size).astype(int), y.size - 1)
    return float(np.sum(np.diff(s) * np.abs(x[ix] - y[iy]) ** p))


def _wp_atoms_density(x: np.ndarray, rho: DensityProfile, p: float, rtol: float) -> float:
    N = x.size
    q_levels = rho.quantile(np.arange(N + 1) / N)
    a, b = rho.support
    cuts = np.union1d(np.union1d(q_levels, np.clip(x, a, b)), rho.breakpoints)
    lo, hi = _density_pieces(rho, cuts)
    mid = 0.5 * (lo + hi)
    # midpoints inside a band [Q((i-1)/N), Q(i/N)] belong to particle i
    owner = np.clip(np.searchsorted(q_levels, mid, side="right") - 1, 0, N - 1)

    def f(y, k):
        return np.abs(x[owner[k]][:, None] - y) ** p * rho.pdf(y)

    return float(np.sum(integrate_pieces(f, lo, hi, rtol=rtol))) / rho._total


def _wp_densities(mu: DensityProfile, nu: DensityProfile, p: float, rtol: float) -> float:
    s_cuts = [0.0, 1.0]
    for rho in (mu, nu):
        nodes = rho.breakpoints if rho.kind == "grid" else rho._nodes[:: max(1, rho._nodes.size // 64)]
        s_cuts.extend(np.clip(rho.cdf(nodes) / rho._total, 0.0, 1.0))
    s = np.unique(np.asarray(s_cuts))

    def f(ss, k):
        flat = ss.ravel()
        return (np.abs(mu.quantile(flat) - nu.quantile(flat)) ** p).reshape(ss.shape)

    return float(np.sum(integrate_pieces(f, s[:-1], s[1:], rtol=rtol)))


def wasserstein_p(mu: Measure, nu: Measure, p: float, *, rtol: float = 1e-10) -> float:
    """``W_p`` between particle sets and/or densities on the line.

    Uses the monotone (quantile) coupling: exact sums for particle sets,
    adaptive quadrature in space for a particle set against a density and
    in quantile level for two densities.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    x, y = _atoms(mu), _atoms(nu)
    if x is not None and y is not None:
        val = _wp_atoms(x, y, p)
    elif x is not None:
        val = _wp_atoms_density(x, nu, p, rtol)
    elif y is not None:
        val = _wp_atoms_density(y, mu, p, rtol)
    else:
        val = _wp_densities(mu, nu, p, rtol)
    return max(val, 0.0) ** (1.0 / p)


# ---------------------------------------------------------------------------
# continuum energy and Fisher information


def continuum_energy(rho: DensityProfile, model: EnergyModel, *, rtol: float = 1e-10) -> float:
    """``E(rho) = int H(rho(x)) dx``."""
    lo, hi = _density_pieces(rho)
    if rho.kind == "grid":
        # evaluate inside each segment so jumps never straddle a node
        def f(x, k):
            return model.H(rho.pdf(np.clip(x, lo[k][:, None], hi[k][:, None])))
    else:
        def f(x, k):
            return model.H(rho.pdf(x))
    return float(np.sum(integrate_pieces(f, lo, hi, rtol=min(rtol, 1e-11))))


def _level_point(rho: DensityProfile, edge: float, inner: float, level: float) -> float:
    """Point between ``edge`` (vacuum) and ``inner`` where ``rho`` first reaches ``level``.

    Bisection in the logarithm of the distance to ``edge``, so crossings
    within a few ulps of ``edge`` are still resolved.  Assumes ``rho``
    increases away from the edge; returns ``inner`` if the level is never
    reached.
    """
    width = inner - edge
    if not rho.pdf(np.array([inner]))[0] >= level:
        return inner
    lo, hi = -1100.0, 0.0  # log2 of the fraction of the width
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if rho.pdf(np.array([edge + width * 2.0**mid]))[0] >= level:
            hi = mid
        else:
            lo = mid
    return edge + width * 2.0**hi


def fisher_information(
    rho: DensityProfile,
    model: EnergyModel,
    *,
    cutoff: float = 1e-12,
    full_output: bool = False,
):
    """Generalized Fisher information ``I_p = int |H''(rho) rho'|^p rho dx``.

    Near each vacuum edge (a piece end where the density falls below
    ``cutoff``) the integral starts where ``rho = cutoff``.  The band where
    ``cutoff <= rho < 10 cutoff`` decides the outcome: more than ``1e-6`` of
    the total flags the value as truncated, and a band contribution that
    does not decay against the next decade is read as divergence, returning
    ``inf``.  With ``full_output`` a ``(value, info)`` pair is returned,
    ``info`` holding ``truncated``, ``divergent`` and the two band values.
    """
    p = model.params.p
    lo, hi = _density_pieces(rho)

    def integrand(x, k):
        xc = np.clip(x, seg_lo[k][:, None], seg_hi[k][:, None])
        r = rho.pdf(xc)
        d = rho.dpdf(xc)
        pos = r > 0
        rr = np.where(pos, r, 1.0)
        with np.errstate(over="ignore"):
            val = np.abs(model.d2H(rr) * d) ** p * rr
        return np.where(pos, val, 0.0)

    levels = (cutoff, 10.0 * cutoff, 100.0 * cutoff)
    rest, band1, band2 = [], [], []
    for a, b in zip(lo, hi):
        eps = 1e-12 * (b - a)
        start, end = a, b
        if rho.pdf(np.array([a + eps]))[0] < levels[2] and rho.pdf(np.array([a]))[0] < cutoff:
            x0, x1, x2 = (_level_point(rho, a, b, v) for v in levels)
            band1.append((x0, x1))
            band2.append((x1, x2))
            start = x2
        if rho.pdf(np.array([b - eps]))[0] < levels[2] and rho.pdf(np.array([b]))[0] < cutoff:
            x0, x1, x2 = (_level_point(rho, b, a, v) for v in levels)
            band1.append((x1, x0))
            band2.append((x2, x1))
            end = x2
        if end > start:
            rest.append((start, end))

    def total_over(intervals, atol=0.0):
        nonlocal seg_lo, seg_hi
        if not intervals:
            return 0.0
        seg_lo, seg_hi = (np.array(v) for v in zip(*intervals))
        return float(np.sum(integrate_pieces(integrand, seg_lo, seg_hi, rtol=1e-10, atol=atol)))

    seg_lo = seg_hi = None
    main = total_over(rest)
    # bands only need accuracy relative to the bulk of the integral
    floor = 1e-12 * main
    b1, b2 = total_over(band1, floor), total_over(band2, floor)
    total = b1 + b2 + main
    truncated = b1 > 1e-6 * max(total, 1e-300)
    divergent = truncated and b1 >= 0.5 * b2 and b1 > 0
    value = np.inf if divergent else total
    if full_output:
        return value, {"truncated": bool(truncated), "divergent": bool(divergent), "band": (b1, b2)}
    return value


# ---------------------------------------------------------------------------
# interpolant


class Interpolant:
    """Density ``rho~_N = (1/m_N) / psi^{-1}(p_i(x))`` on ``[x_1, x_N]``.

    ``p_i`` interpolates linearly between ``psi_i / N`` at ``x_i`` and
    ``psi_{i+1} / N`` at ``x_{i+1}``, so ``L_H(nu_N) = p_i`` exactly for the
    unnormalized ``nu_N = m_N rho~_N``.  Zero outside ``[x_1, x_N]``.
    """

    def __init__(self, config: ParticleConfig, model: EnergyModel):
        self.config = config
        self.model = model
        N = config.N
        psi = N * model.psi(N * config.gaps)
        self._pl = psi[:-2] / N  # value at x_i, cell i = 0..N-2
        self._pr = psi[1:-1] / N  # value at x_{i+1}
        x = config.positions
        self._xl, self._xr = x[:-1], x[1:]
        masses = integrate_pieces(lambda y, k: self.nu(y, k), self._xl, self._xr, rtol=1e-12)
        self.cell_masses = masses
        self.m_N = float(masses.sum())

    def _cell(self, x):
        return np.clip(np.searchsorted(self._xl, x, side="right") - 1, 0, self._xl.size - 1)

    def p_values(self, x, cell=None):
        x = np.asarray(x, dtype=float)
        k = self._cell(x) if cell is None else (cell[:, None] if np.ndim(x) == 2 else cell)
        t = (x - self._xl[k]) / (self._xr[k] - self._xl[k])
        return self._pl[k] + (self._pr[k] - self._pl[k]) * t

    def psi_inverse(self, x, cell=None):
        """``psi^{-1}(p_i(x))``; ``inf`` where ``p_i(x) = 0``."""
        P = self.p_values(x, cell)
        pos = P > 0
        out = np.full(P.shape, np.inf)
        if np.any(pos):
            out[pos] = self.model.psi_inverse(P[pos])
        return out

    def nu(self, x, cell=None):
        """Unnormalized ``nu_N = 1 / psi^{-1}(p_i(x))``."""
        x = np.asarray(x, dtype=float)
        inside = (x >= self._xl[0]) & (x <= self._xr[-1])
        return np.where(inside, 1.0 / self.psi_inverse(x, cell), 0.0)

    def dnu(self, x, cell=None):
        """``nu_N'``; with ``X = psi^{-1}(p_i)``, ``nu' = -p_i' / (X^2 psi'(X))``."""
        x = np.asarray(x, dtype=float)
        k = self._cell(x) if cell is None else cell
        slope = (self._pr[k] - self._pl[k]) / (self._xr[k] - self._xl[k])
        X = self.psi_inverse(x, cell)
        inside = (x >= self._xl[0]) & (x <= self._xr[-1]) & np.isfinite(X)
        Xs = np.where(inside, X, 1.0)
        return np.where(inside, -slope / (Xs**2 * self.model.dpsi(Xs)), 0.0)

    def __call__(self, x):
        return self.nu(x) / self.m_N

    def bracket(self, n_per_cell: int = 10):
        """Check ``N min(dx_i, dx_{i+1}) <= psi^{-1}(p_i(x)) <= N max(...)``.

        Returns the worst relative violation over ``n_per_cell`` interior
        points per cell (<= 0 when the estimate holds).
        """
        N = self.config.N
        g = self.config.gaps
        t = (np.arange(n_per_cell) + 0.5) / n_per_cell
        x = self._xl[:, None] + (self._xr - self._xl)[:, None] * t[None, :]
        cells = np.arange(self._xl.size)
        v = self.psi_inverse(x, cells)
        lo = (N * np.minimum(g[:-2], g[1:-1]))[:, None]
        hi = (N * np.maximum(g[:-2], g[1:-1]))[:, None]
        with np.errstate(invalid="ignore"):
            viol_lo = (lo - v) / lo
            viol_hi = np.where(np.isinf(hi), -np.inf, (v - hi) / np.where(np.isinf(hi), 1.0, hi))
        return float(max(np.max(viol_lo), np.max(viol_hi)))

    def slope_p(self) -> float:
        """``g(nu_N)^p = I_p(nu_N)`` from the exact cell-wise formula.

        With ``L_H(nu) = p_i`` linear on a cell, ``H''(nu) nu' = p_i' / nu``
        and ``I_p = sum_i |p_i'|^p int (psi^{-1}(p_i))^(p-1) dx``.
        """
        p = self.model.params.p
        slope = (self._pr - self._pl) / (self._xr - self._xl)
        active = slope != 0
        if not np.any(active):
            return 0.0
        idx = np.flatnonzero(active)

        def f(y, k):
            return self.psi_inverse(y, idx[k]) ** (p - 1.0)

        ints = integrate_pieces(f, self._xl[idx], self._xr[idx], rtol=1e-12)
        return float(np.sum(np.abs(slope[idx]) ** p * ints))

    def as_density(self, *, normalize: bool = True) -> DensityProfile:
        return DensityProfile.from_function(self.nu, (self._xl[0], self._xr[-1]), self.dnu,
                                            normalize=normalize, kinks=self.config.positions)


def interpolant(cfg: ParticleConfig, model: EnergyModel) -> Interpolant:
    return Interpolant(cfg, model)

"""Particle configurations, the discrete energy and its subdifferential.

A configuration of ``N`` sorted particles carries ``N + 1`` gaps
``G_1, ..., G_{N+1}``: the ``N - 1`` interior gaps ``x_k - x_{k-1}`` and two
boundary gaps to fictitious neighbours.  The boundary rule depends on the
domain:

* whole line: no neighbour, the boundary gaps are ``+inf``;
* interval ``[-l, l]``, free ends: the fictitious particle is the mirror
  image of the end particle in the wall, so ``G_1 = 2 (x_1 + l)``;
* interval, pinned ends (``x_1 = -l``, ``x_N = l``): the end particle sits
  on the wall, the fictitious particle mirrors its inner neighbour and
  ``G_1 = G_2``, ``G_{N+1} = G_N``.  Pinned particles never move.

Each particle owns the ball of diameter ``r_i = min(G_i, G_{i+1})`` and the
discrete energy is ``E_N = (1/N) sum_i h(N r_i)``.

The subdifferential in weighted-dual coordinates ``z = N grad E_N`` is
parameterised by one selection weight ``lambda_i`` per particle: ``lambda_i``
is 1 when the right gap is the smaller one, 0 when the left one is, and
free in ``[0, 1]`` on a tie.  With ``c_k = lambda_{k-1} + 1 - lambda_k``
(``lambda_0 = 0``, ``lambda_{N+1} = 1``) the derivative of ``N E_N`` with
respect to gap ``k`` is ``-psi_k c_k`` where ``psi_k = N psi(N G_k)``; the
chain rule through the gap Jacobian gives ``z``.  For the whole line this is

    z_i = (lambda_i - lambda_{i+1} + 1) psi_{i+1} - (lambda_{i-1} - lambda_i + 1) psi_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .energy import EnergyModel
from .errors import DegenerateConfigurationError, LambdaError, ModelError

__all__ = [
    "DomainSpec",
    "ParticleConfig",
    "TieStructure",
    "Subgradient",
    "discrete_energy",
    "weighted_norm",
    "weighted_pairing",
    "psi_vector",
    "lambda_structure",
    "subgradient_element",
    "minimal_selection",
    "discrete_slope",
    "subgradient_index_check",
    "DEFAULT_TIE_TOL",
]

DEFAULT_TIE_TOL = 1e-9
_PIN_TOL = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "whole_line"
    l: Optional[float] = None
    pinned: bool = False

    def __post_init__(self):
        if self.kind not in ("whole_line", "interval"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "interval":
            if self.l is None or not np.isfinite(self.l) or self.l <= 0:
                raise ValueError("interval domain needs a positive half-width l")
            object.__setattr__(self, "l", float(self.l))
        elif self.pinned:
            raise ValueError("pinned ends only make sense on an interval")

    @classmethod
    def whole_line(cls) -> "DomainSpec":
        return cls("whole_line")

    @classmethod
    def interval(cls, l: float, pinned: bool = False) -> "DomainSpec":
        return cls("interval", l, pinned)

    @property
    def is_interval(self) -> bool:
        return self.kind == "interval"


class ParticleConfig:
    """Sorted, distinct particle positions on a 1D domain (immutable)."""

    __slots__ = ("_x", "domain", "_gaps")

    def __init__(self, positions, domain: Optional[DomainSpec] = None, *, sort: bool = True):
        domain = domain or DomainSpec.whole_line()
        x = np.array(positions, dtype=float).ravel()
        if x.size < 2:
            raise DegenerateConfigurationError("need at least two particles")
        if not np.all(np.isfinite(x)):
            raise DegenerateConfigurationError("positions must be finite")
        if sort:
            x = np.sort(x)
        if np.any(np.diff(x) <= 0.0):
            raise DegenerateConfigurationError("particles must be distinct and sorted increasingly")
        if domain.is_interval:
            l = domain.l
            if domain.pinned:
                if abs(x[0] + l) > _PIN_TOL * max(1.0, l) or abs(x[-1] - l) > _PIN_TOL * max(1.0, l):
                    raise DegenerateConfigurationError(
                        "pinned interval needs x_1 = -l and x_N = l"
                    )
                x[0], x[-1] = -l, l
            elif x[0] < -l or x[-1] > l:
                raise DegenerateConfigurationError("particles must lie in [-l, l]")
        x.setflags(write=False)
        self._x = x
        self.domain = domain
        self._gaps = None

    @property
    def positions(self) -> np.ndarray:
        return self._x

    @property
    def N(self) -> int:
        return self._x.size

    def __len__(self):
        return self._x.size

    def __repr__(self):
        return f"ParticleConfig(N={self.N}, domain={self.domain.kind}, pinned={self.domain.pinned})"

    def with_positions(self, positions) -> "ParticleConfig":
        return ParticleConfig(positions, self.domain, sort=False)

    @property
    def interior_gaps(self) -> np.ndarray:
        return np.diff(self._x)

    @property
    def gaps(self) -> np.ndarray:
        """All ``N + 1`` gaps ``G_1 .. G_{N+1}`` including the boundary rule."""
        if self._gaps is None:
            x = self._x
            inner = np.diff(x)
            dom = self.domain
            if not dom.is_interval:
                left = right = np.inf
            elif dom.pinned:
                left, right = inner[0], inner[-1]
            else:
                left, right = 2.0 * (x[0] + dom.l), 2.0 * (dom.l - x[-1])
            g = np.concatenate(([left], inner, [right]))
            if np.any(g <= 0.0):
                raise DegenerateConfigurationError(
                    "zero boundary gap: a free end particle touches the wall "
                    "(use pinned ends for x_1 = -l)"
                )
            g.setflags(write=False)
            self._gaps = g
        return self._gaps

    @property
    def ball_sizes(self) -> np.ndarray:
        """``r_i = min(G_i, G_{i+1})``, the diameter of particle ``i``'s ball."""
        g = self.gaps
        return np.minimum(g[:-1], g[1:])

    def moment(self, p: float) -> float:
        return float(np.mean(np.abs(self._x) ** p))


# ---------------------------------------------------------------------------
# energies and norms


def discrete_energy(cfg: ParticleConfig, model: EnergyModel, *, check: bool = True) -> float:
    """``E_N = sum_i |B_i| H(1 / (N |B_i|)) = (1/N) sum_i h(N r_i)``."""
    N = cfg.N
    r = cfg.ball_sizes
    e_h = float(np.mean(model.h(N * r)))
    if check:
        e_ball = float(np.sum(r * model.H(1.0 / (N * r))))
        if abs(e_ball - e_h) > 1e-12 * max(abs(e_h), abs(e_ball), 1e-300):
            raise ModelError(
                f"ball and h forms of the discrete energy disagree: {e_ball!r} vs {e_h!r}"
            )
    return e_h


def weighted_norm(v, exponent: float) -> float:
    """``((1/N) sum |v_i|^exponent)^(1/exponent)``."""
    if exponent < 1:
        raise ValueError("exponent must be >= 1")
    v = np.asarray(v, dtype=float)
    if exponent == np.inf:
        return float(np.max(np.abs(v)))
    return float(np.mean(np.abs(v) ** exponent) ** (1.0 / exponent))


def weighted_pairing(x, y) -> float:
    """``(x, y)_w = (1/N) sum x_i y_i``."""
    return float(np.mean(np.asarray(x, dtype=float) * np.asarray(y, dtype=float)))


def psi_vector(cfg: ParticleConfig, model: EnergyModel) -> np.ndarray:
    """``psi_k = N psi(N G_k)`` for the ``N + 1`` gaps (0 for infinite gaps)."""
    N = cfg.N
    g = cfg.gaps
    return N * model.psi(N * g)


# ---------------------------------------------------------------------------
# selection weights


@dataclass(frozen=True)
class TieStructure:
    """Classification of each particle's right gap against its left gap.

    ``classes[i]`` is ``"less"`` (right gap smaller, weight 1), ``"greater"``
    (weight 0) or ``"tied"`` (free weight).  ``forced`` holds the weights with
    ``nan`` at free slots, ``free`` the free particle indices and
    ``clusters`` maximal runs of consecutive free indices.
    """

    classes: tuple
    forced: np.ndarray
    free: tuple
    clusters: tuple

    @property
    def n_free(self) -> int:
        return len(self.free)


def lambda_structure(cfg: ParticleConfig, tie_tol=DEFAULT_TIE_TOL) -> TieStructure:
    """Classify each particle's right gap against its left gap.

    ``tie_tol`` is a relative tolerance, either scalar or one value per
    particle (``inf`` forces a tie wherever both gaps are finite).
    """
    tol = np.broadcast_to(np.asarray(tie_tol, dtype=float), (cfg.N,))
    if np.any(tol < 0) or np.any(np.isnan(tol)):
        raise ValueError("tie_tol must be >= 0")
    g = cfg.gaps
    left, right = g[:-1], g[1:]
    N = cfg.N
    with np.errstate(invalid="ignore"):
        both_finite = np.isfinite(left) & np.isfinite(right)
        diff = np.abs(right - left)
        tied = both_finite & ((diff <= tol * np.maximum(left, right)) | np.isinf(tol))
    less = ~tied & (right < left)
    classes = np.where(tied, "tied", np.where(less, "less", "greater")).astype(object)
    if cfg.domain.pinned:
        # the boundary gap equals its neighbour identically; the weight cancels
        classes[0] = "less"
        classes[N - 1] = "greater"
    forced = np.where(classes == "less", 1.0, np.where(classes == "greater", 0.0, np.nan))
    free = tuple(int(i) for i in np.flatnonzero(classes == "tied"))
    clusters = []
    for i in free:
        if clusters and clusters[-1][-1] == i - 1:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    forced.setflags(write=False)
    return TieStructure(tuple(classes), forced, free, tuple(tuple(c) for c in clusters))


def _gap_to_z(cfg: ParticleConfig, g: np.ndarray) -> np.ndarray:
    """Push gap derivatives ``g_k = N dE/dG_k`` through the gap Jacobian.

    ``g`` may carry extra trailing columns, each mapped independently.
    """
    N = cfg.N
    z = np.zeros((N,) + g.shape[1:])
    inner = g[1:N]
    z[1:] += inner
    z[:-1] -= inner
    dom = cfg.domain
    if dom.is_interval:
        if dom.pinned:
            z[1] += g[0]
            z[0] -= g[0]
            z[N - 1] += g[N]
            z[N - 2] -= g[N]
            z[0] = 0.0
            z[N - 1] = 0.0
        else:
            z[0] += 2.0 * g[0]
            z[N - 1] -= 2.0 * g[N]
    return z


def _gap_weights(lam: np.ndarray) -> np.ndarray:
    full = np.concatenate(([0.0], lam, [1.0]))
    return full[:-1] + 1.0 - full[1:]


def _affine_parts(cfg: ParticleConfig, psi: np.ndarray, ties: TieStructure):
    """``z(lam_free) = z0 + A @ lam_free``."""
    lam0 = np.where(np.isnan(ties.forced), 0.0, ties.forced)
    z0 = _gap_to_z(cfg, -psi * _gap_weights(lam0))
    free = np.asarray(ties.free, dtype=int)
    cols = np.arange(free.size)
    dg = np.zeros((cfg.N + 1, free.size))
    dg[free, cols] = psi[free]
    dg[free + 1, cols] = -psi[free + 1]
    return z0, _gap_to_z(cfg, dg), lam0


@dataclass(frozen=True)
class Subgradient:
    """An element ``z`` of the weighted subdifferential with its weights."""

    z: np.ndarray
    lambdas: np.ndarray
    psi: np.ndarray
    classes: tuple
    is_minimal_selection: bool = False
    converged: bool = True

    @property
    def lambda_triplets(self) -> tuple:
        """Free weights grouped by tie cluster, as ``{particle index: lambda}`` maps."""
        groups: list = []
        for i, c in enumerate(self.classes):
            if c != "tied":
                continue
            if groups and i - 1 in groups[-1]:
                groups[-1][i] = float(self.lambdas[i])
            else:
                groups.append({i: float(self.lambdas[i])})
        return tuple(groups)

    def rows(self):
        """``(i, psi_i, z_i, lambda_class)`` rows, 1-based ``i``."""
        return [
            (i + 1, float(self.psi[i]), float(self.z[i]), self.classes[i])
            for i in range(self.z.size)
        ]


def subgradient_element(
    cfg: ParticleConfig,
    model: EnergyModel,
    lambdas: Union[None, Mapping[int, float], Sequence[float]] = None,
    tie_tol: float = DEFAULT_TIE_TOL,
) -> Subgradient:
    """Assemble the subdifferential element for given free weights.

    ``lambdas`` maps 0-based particle indices with a tied right gap to
    weights in ``[0, 1]`` (or lists them in the order of
    ``lambda_structure(cfg).free``).  Unspecified free weights default to 0.5.
    """
    ties = lambda_structure(cfg, tie_tol)
    lam = np.where(np.isnan(ties.forced), 0.5, ties.forced)
    if lambdas is not None:
        if isinstance(lambdas, Mapping):
            items = lambdas.items()
        else:
            vals = list(lambdas)
            if len(vals) != ties.n_free:
                raise LambdaError(f"expected {ties.n_free} free weights, got {len(vals)}")
            items = zip(ties.free, vals)
        for i, v in items:
            if i not in ties.free:
                raise LambdaError(f"particle {i} has no tie; its weight is fixed at {ties.forced[i]:g}")
            if not (0.0 <= v <= 1.0):
                raise LambdaError(f"weight {v!r} for particle {i} outside [0, 1]")
            lam[i] = v
    psi = psi_vector(cfg, model)
    z = _gap_to_z(cfg, -psi * _gap_weights(lam))
    return Subgradient(z, lam, psi, ties.classes, is_minimal_selection=ties.n_free == 0)


def subgradient_index_check(model: EnergyModel, n_configs: int = 20, seed: int = 0) -> dict:
    """Decide the index placement of the subgradient formula against finite differences.

    Two placements are candidates at no-tie configurations on the line:
    ``z_i = c_{i+1} psi_{i+1} - c_i psi_i`` ("statement") and the same
    coefficients with ``psi_i`` and ``psi_{i+1}`` swapped ("proof"), where
    ``c_k = lam_{k-1} + 1 - lam_k``.  Each is compared with ``N`` times a
    central difference of the energy; the report names the one that matches
    and confirms that :func:`subgradient_element` follows it.
    """
    rng = np.random.default_rng(seed)
    worst = {"statement": 0.0, "proof": 0.0, "assembled": 0.0}
    for _ in range(n_configs):
        N = int(rng.integers(3, 12))
        while True:
            gaps = rng.uniform(0.5, 2.0, N - 1)
            if np.all(np.abs(np.diff(gaps)) > 1e-3):
                break
        x = np.concatenate(([0.0], np.cumsum(gaps)))
        cfg = ParticleConfig(x, DomainSpec.whole_line())
        psi = psi_vector(cfg, model)
        lam = np.concatenate(([0.0], lambda_structure(cfg).forced, [1.0]))
        c = lam[:-1] + 1.0 - lam[1:]  # c_k for gaps k = 0..N
        statement = c[1:] * psi[1:] - c[:-1] * psi[:-1]
        proof = c[1:] * psi[:-1] - c[:-1] * psi[1:]
        fd = np.empty(N)
        eps = 1e-6 * float(np.min(gaps))
        for i in range(N):
            xp, xm = x.copy(), x.copy()
            xp[i] += eps
            xm[i] -= eps
            ep = discrete_energy(cfg.with_positions(xp), model, check=False)
            em = discrete_energy(cfg.with_positions(xm), model, check=False)
            fd[i] = N * (ep - em) / (2.0 * eps)
        scale = max(float(np.max(np.abs(fd))), 1e-300)
        assembled = subgradient_element(cfg, model).z
        for key, z in (("statement", statement), ("proof", proof), ("assembled", assembled)):
            worst[key] = max(worst[key], float(np.max(np.abs(z - fd))) / scale)
    convention = "statement" if worst["statement"] < worst["proof"] else "proof"
    return {
        "convention": convention,
        "statement_error": worst["statement"],
        "proof_error": worst["proof"],
        "assembled_error": worst["assembled"],
        "assembled_matches": worst["assembled"] <= 1e-6,
    }


# ---------------------------------------------------------------------------
# minimal-norm selection


def _argmin_1d(w: np.ndarray, a: np.ndarray, q: float) -> float:
    """Minimise ``sum |w + a t|^q`` over ``t in [0, 1]``."""
    if q == 2.0:
        aa = a @ a
        if aa == 0.0:
            return 0.0
        return float(min(1.0, max(0.0, -(a @ w) / aa)))

    def dphi(t):
        r = w + a * t
        return np.sum(np.abs(r) ** (q - 1.0) * np.sign(r) * a)

    if dphi(0.0) >= 0.0:
        return 0.0
    if dphi(1.0) <= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if dphi(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-16:
            break
    return 0.5 * (lo + hi)


def _kkt_residual(z: np.ndarray, A: np.ndarray, lam: np.ndarray, q: float) -> float:
    """Projected-gradient norm of ``||z||_q`` over the box, in lambda units.

    The gradient of the norm itself is scale free; that of ``sum |z|^q``
    shrinks like ``|z|^(q-1)`` and would pass residuals near ``1e-5`` for q = 3.
    """
    if A.shape[1] == 0:
        return 0.0
    size = np.sum(np.abs(z) ** q) ** (1.0 / q)
    if size == 0.0:
        return 0.0
    grad = A.T @ (np.abs(z / size) ** (q - 1.0) * np.sign(z))
    proj = np.where(lam <= 0.0, np.minimum(grad, 0.0), np.where(lam >= 1.0, np.maximum(grad, 0.0), grad))
    return float(np.max(np.abs(proj)))


GRID_POINTS = 200_000


def _grid_search(z0, A, q, cols, lam, width_tol=1e-13, max_levels=60):
    """Zooming tensor-grid search over the weights ``cols`` (others fixed).

    Each level holds at most ``GRID_POINTS`` points; the box around the
    best point shrinks until its width is below ``width_tol``.
    """
    k = len(cols)
    lo = np.zeros(k)
    hi = np.ones(k)
    base = z0 + A @ lam - A[:, cols] @ lam[cols]
    best = lam[cols].copy()
    n_first = min(101, int(GRID_POINTS ** (1.0 / k)))
    n_zoom = min(21, n_first)
    for level in range(max_levels):
        if np.max(hi - lo) < width_tol:
            break
        n = n_first if level == 0 else n_zoom
        axes = [np.linspace(lo[d], hi[d], n) for d in range(k)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        vals = np.sum(np.abs(base[None, :] + mesh @ A[:, cols].T) ** q, axis=1)
        best = mesh[np.argmin(vals)]
        width = (hi - lo) / (n - 1)
        lo = np.maximum(0.0, best - 2 * width)
        hi = np.minimum(1.0, best + 2 * width)
    out = lam.copy()
    out[cols] = best
    return out


def _components(A: np.ndarray):
    """Groups of weight columns coupled through shared rows of ``A``.

    Column supports are short row bands, so coupling reduces to merging
    overlapping ``[first, last]`` row intervals.
    """
    nz = A != 0
    has = nz.any(axis=0)
    first = np.where(has, nz.argmax(axis=0), -1)
    last = np.where(has, A.shape[0] - 1 - nz[::-1].argmax(axis=0), -1)
    order = np.argsort(first, kind="stable")
    groups = []
    reach = -2
    for j in order:
        if not has[j]:
            groups.append([j])
            continue
        if groups and first[j] <= reach and has[groups[-1][0]]:
            groups[-1].append(j)
            reach = max(reach, last[j])
        else:
            groups.append([j])
            reach = last[j]
    return [np.array(sorted(g)) for g in groups]


def _coordinate_descent(shift, A, q, lam, tol, max_sweeps):
    z = shift + A @ lam
    supports = [np.flatnonzero(A[:, j]) for j in range(A.shape[1])]
    scale = max(1.0, float(np.max(np.abs(A))))
    for _ in range(max_sweeps):
        moved = 0.0
        for j, s in enumerate(supports):
            a = A[s, j]
            w = z[s] - a * lam[j]
            t = _argmin_1d(w, a, q)
            if t != lam[j]:
                moved = max(moved, abs(t - lam[j]))
                z[s] = w + a * t
                lam[j] = t
        if moved < 1e-15 or _kkt_residual(z, A, lam, q) <= tol * scale:
            return lam, True
    return lam, _kkt_residual(z, A, lam, q) <= tol * scale


def _projected_newton(shift, A, q, lam, tol, max_iter=100):
    """Projected Newton for ``min sum |shift + A lam|^q`` on the unit box.

    Weights at a bound whose gradient pushes outward stay fixed; the rest
    take a Newton step and the trial point is projected back onto the box.
    """
    scale = max(float(np.max(np.abs(shift))), float(np.max(np.abs(A))), 1e-300)
    # same stopping rule as coordinate descent, in the rescaled units
    tol_s = tol * max(1.0, float(np.max(np.abs(A)))) / scale
    A, b = A / scale, shift / scale

    def parts(l):
        r = b + A @ l
        a = np.abs(r)
        return r, float(np.sum(a**q))

    r, f = parts(lam)
    for _ in range(max_iter):
        if _kkt_residual(r, A, lam, q) <= tol_s:
            return lam, True
        a = np.abs(r)
        g = A.T @ (q * a ** (q - 1.0) * np.sign(r))
        with np.errstate(divide="ignore"):
            curv = q * (q - 1.0) * a ** (q - 2.0)
        curv = np.minimum(curv, 1e16 * max(float(np.max(curv[np.isfinite(curv)], initial=0.0)), 1e-300))
        held = ((lam <= 0.0) & (g > 0.0)) | ((lam >= 1.0) & (g < 0.0))
        free = ~held
        step = np.zeros_like(lam)
        if free.any():
            Af = A[:, free]
            Hf = Af.T @ (curv[:, None] * Af)
            Hf[np.diag_indices_from(Hf)] += 1e-14 * max(float(np.max(np.diag(Hf))), 1e-300)
            try:
                step[free] = -np.linalg.solve(Hf, g[free])
            except np.linalg.LinAlgError:
                return lam, False
        s = 1.0
        while s > 1e-12:
            trial = np.clip(lam + s * step, 0.0, 1.0)
            rt, ft = parts(trial)
            if ft <= f + 1e-4 * float(g @ (trial - lam)):
                break
            s *= 0.5
        else:
            return lam, False
        if ft >= f:
            return lam, _kkt_residual(r, A, lam, q) <= tol_s
        lam, r, f = trial, rt, ft
    return lam, _kkt_residual(r, A, lam, q) <= tol_s


def _solve_component(shift, A, q, tol):
    """Box-constrained ``min sum |shift + A lam|^q`` for one coupled group."""
    from scipy.optimize import lsq_linear, minimize

    k = A.shape[1]
    if q == 2.0:
        lam, *_ = np.linalg.lstsq(A, -shift, rcond=None)
        if np.all((lam >= 0.0) & (lam <= 1.0)):
            return lam, True
        res = lsq_linear(A, -shift, bounds=(0.0, 1.0), method="bvls", tol=1e-15)
        lam = np.clip(res.x, 0.0, 1.0)
        return lam, bool(res.success)
    # a feasible exact zero of the residual is the minimiser for every q
    lam, *_ = np.linalg.lstsq(A, -shift, rcond=None)
    if not np.all((lam >= 0.0) & (lam <= 1.0)):
        lam = np.clip(lsq_linear(A, -shift, bounds=(0.0, 1.0), method="bvls", tol=1e-15).x, 0.0, 1.0)
    floor = 1e-14 * max(float(np.max(np.abs(shift))), 1e-300)
    if np.max(np.abs(shift + A @ lam)) <= floor:
        return lam, True
    lam, ok = _projected_newton(shift, A, q, lam, tol)
    if ok:
        return lam, True
    lam, ok = _coordinate_descent(shift, A, q, lam, tol, max_sweeps=50)
    if ok:
        return lam, True
    scale = max(float(np.max(np.abs(shift))), float(np.max(np.abs(A))), 1e-300)
    As, bs = A / scale, shift / scale

    def fun(l):
        r = bs + As @ l
        a = np.abs(r)
        return float(np.sum(a**q)), As.T @ (q * a ** (q - 1.0) * np.sign(r))

    res = minimize(fun, lam, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * k,
                   options={"ftol": 1e-15, "gtol": 1e-14, "maxiter": 10000})
    lam = np.clip(res.x, 0.0, 1.0)
    return _coordinate_descent(shift, A, q, lam, tol, max_sweeps=200)


def _min_norm_weights(z0, A, q, *, offset=None, tol=1e-10):
    """Minimise ``||z0 + offset + A lam||_q`` over ``lam in [0, 1]^k``.

    Weight groups that share no rows of ``A`` are solved independently:
    bounded least squares for ``q = 2``, coordinate descent polished by
    L-BFGS-B otherwise.  Groups of at most four weights that still miss the
    first-order tolerance are settled by a zooming grid search.  Returns
    ``(lam, converged)``.
    """
    k = A.shape[1]
    shift = z0 if offset is None else z0 + offset
    if k == 0:
        return np.zeros(0), True
    lam = np.zeros(k)
    converged = True
    for cols in _components(A):
        rows = np.flatnonzero(np.any(A[:, cols] != 0, axis=1))
        Ac = A[np.ix_(rows, cols)]
        lc, ok = _solve_component(shift[rows], Ac, q, tol)
        if not ok and len(cols) <= 4:
            lc = _grid_search(shift[rows], Ac, q, list(range(len(cols))), lc)
            ok = True
        lam[cols] = lc
        converged &= ok
    return lam, converged


def minimal_selection(
    cfg: ParticleConfig,
    model: EnergyModel,
    tie_tol=DEFAULT_TIE_TOL,
) -> Subgradient:
    """The element of minimal ``(w, q)`` dual norm in the subdifferential."""
    ties = lambda_structure(cfg, tie_tol)
    psi = psi_vector(cfg, model)
    z0, A, lam = _affine_parts(cfg, psi, ties)
    if ties.n_free == 0:
        return Subgradient(z0, lam, psi, ties.classes, is_minimal_selection=True)
    lam_free, converged = _min_norm_weights(z0, A, model.params.q)
    lam = lam.copy()
    lam[list(ties.free)] = lam_free
    z = z0 + A @ lam_free
    return Subgradient(z, lam, psi, ties.classes, is_minimal_selection=True, converged=converged)


def discrete_slope(
    cfg: ParticleConfig,
    model: EnergyModel,
    convention: str = "dual_q",
    *,
    selection: Optional[Subgradient] = None,
    tie_tol: float = DEFAULT_TIE_TOL,
) -> float:
    """Local slope ``g_N`` of the discrete energy.

    ``dual_q`` measures the minimal selection in the ``(w, q)`` dual norm,
    which makes ``g_N^q = |x'|_{w,p}^p`` along the flow; ``paper_p`` uses the
    ``(w, p)`` norm of the same element.
    """
    if convention not in ("dual_q", "paper_p"):
        raise ValueError(f"unknown slope convention {convention!r}")
    sel = selection if selection is not None else minimal_selection(cfg, model, tie_tol)
    exponent = model.params.q if convention == "dual_q" else model.params.p
    return weighted_norm(sel.z, exponent)

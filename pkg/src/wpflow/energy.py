"""Internal-energy densities ``H`` and the quantities derived from them.

An energy model bundles ``H`` (density of the internal energy), the
one-dimensional volume transform ``h(x) = x H(1/x)`` and the pressure-like
function ``psi = -h'``.  The power-law family

    H(u) = c u^m,   m = gamma + 2 - p,   c = gamma / ((gamma + 1 - p) m)

is the one whose Wasserstein gradient flow is the doubly nonlinear equation
``u_t = Delta_q (u^gamma)``; it is available in closed form.  Arbitrary
models can be built from ``H`` and its first two derivatives, in which case
``h``, ``psi`` and ``psi^{-1}`` are derived numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelError, OutOfRangeError

U_MIN = 1e-300

__all__ = [
    "FlowParams",
    "EnergyModel",
    "ClauseResult",
    "ValidationReport",
    "power_law_model",
    "custom_model",
    "validate_hypotheses",
    "psi_inverse_numeric",
]


@dataclass(frozen=True)
class FlowParams:
    """Exponents of the flow: Wasserstein exponent ``p``, its conjugate ``q``
    and (for the power-law family) the polytropic exponent ``gamma``."""

    p: float
    gamma: Optional[float] = None
    q: float = field(init=False)

    def __post_init__(self):
        p = float(self.p)
        if not np.isfinite(p) or p <= 1.0:
            raise ModelError(f"p must be > 1, got {self.p!r}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", p / (p - 1.0))
        if self.gamma is not None:
            g = float(self.gamma)
            if not np.isfinite(g) or g <= 0.0:
                raise ModelError(f"gamma must be > 0, got {self.gamma!r}")
            object.__setattr__(self, "gamma", g)


def _clip(u):
    u = np.asarray(u, dtype=float)
    return np.where(u > 0.0, np.maximum(u, U_MIN), 0.0)


@dataclass(frozen=True)
class EnergyModel:
    """Immutable bundle of ``H``, ``h``, ``psi`` and the hypothesis data.

    ``doubling_constant``, ``f``, ``f1`` and ``f2`` are ``None`` when the
    model does not supply them in closed form; validation then estimates or
    merely samples the corresponding inequalities.
    """

    params: FlowParams
    name: str
    H_fn: Callable
    dH_fn: Callable
    d2H_fn: Callable
    h_fn: Callable
    dh_fn: Callable
    d2h_fn: Callable
    psi_inverse_fn: Optional[Callable] = None
    doubling_constant: Optional[float] = None
    f: Optional[Callable] = None
    f1: Optional[Callable] = None
    f2: Optional[Callable] = None

    # H and its derivatives, on u >= 0 (H(0) = 0 exactly).
    def H(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u == 0.0, 0.0, self.H_fn(_clip(u)))

    def dH(self, u):
        return self.dH_fn(np.maximum(np.asarray(u, dtype=float), U_MIN))

    def d2H(self, u):
        return self.d2H_fn(np.maximum(np.asarray(u, dtype=float), U_MIN))

    def L_H(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u == 0.0, 0.0, u * self.dH(u) - self.H(u))

    def h(self, x):
        return self.h_fn(np.asarray(x, dtype=float))

    def dh(self, x):
        return self.dh_fn(np.asarray(x, dtype=float))

    def d2h(self, x):
        return self.d2h_fn(np.asarray(x, dtype=float))

    def psi(self, x):
        """``psi(x) = -h'(x)``; zero at ``x = inf``."""
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = -self.dh_fn(np.where(np.isinf(x), 1.0, x))
        return np.where(np.isinf(x), 0.0, out)

    def dpsi(self, x):
        return -self.d2h(x)

    def psi_inverse(self, y):
        return psi_inverse_numeric(self, y)


def power_law_model(params: FlowParams) -> EnergyModel:
    """Closed-form model ``H(u) = c u^m`` associated with ``u_t = Delta_q u^gamma``."""
    if params.gamma is None:
        raise ModelError("power-law family requires gamma")
    p, g = params.p, params.gamma
    if g + 1.0 - p <= 0.0:
        raise ModelError(
            f"power-law family needs gamma + 1 - p > 0 (got gamma={g}, p={p}); "
            "psi would not be invertible"
        )
    m = g + 2.0 - p
    c = g / ((g + 1.0 - p) * m)
    k = c * (m - 1.0)

    return EnergyModel(
        params=params,
        name="power_law",
        H_fn=lambda u: c * u**m,
        dH_fn=lambda u: c * m * u ** (m - 1.0),
        d2H_fn=lambda u: c * m * (m - 1.0) * u ** (m - 2.0),
        h_fn=lambda x: c * x ** (1.0 - m),
        dh_fn=lambda x: -k * x ** (-m),
        d2h_fn=lambda x: k * m * x ** (-m - 1.0),
        psi_inverse_fn=lambda y: (k / y) ** (1.0 / m),
        doubling_constant=max(1.0, 2.0 ** (m - 1.0)),
        f=lambda a: np.asarray(a, dtype=float) ** (m - 2.0),
        f1=lambda a: np.asarray(a, dtype=float) ** m,
        f2=lambda a: np.zeros_like(np.asarray(a, dtype=float)),
    )


def custom_model(
    params: FlowParams,
    H: Callable,
    dH: Callable,
    d2H: Callable,
    name: str = "custom",
    *,
    doubling_constant: Optional[float] = None,
    f: Optional[Callable] = None,
    f1: Optional[Callable] = None,
    f2: Optional[Callable] = None,
) -> EnergyModel:
    """Build a model from ``H`` and its derivatives; ``h`` family is derived.

    Uses ``h(x) = x H(1/x)``, ``h'(x) = H(1/x) - H'(1/x)/x`` and
    ``h''(x) = H''(1/x) / x^3``.  No validation happens here, see
    :func:`validate_hypotheses`.
    """

    def h_fn(x):
        return x * H(1.0 / x)

    def dh_fn(x):
        return H(1.0 / x) - dH(1.0 / x) / x

    def d2h_fn(x):
        return d2H(1.0 / x) / x**3

    return EnergyModel(
        params=params,
        name=name,
        H_fn=H,
        dH_fn=dH,
        d2H_fn=d2H,
        h_fn=h_fn,
        dh_fn=dh_fn,
        d2h_fn=d2h_fn,
        doubling_constant=doubling_constant,
        f=f,
        f1=f1,
        f2=f2,
    )


def psi_inverse_numeric(model: EnergyModel, y, *, max_iter: int = 200):
    """Invert the strictly decreasing ``psi`` on ``(0, inf)``.

    Closed forms are used when the model provides one.  Otherwise a bracket
    is grown geometrically from ``x = 1`` and refined by log-space bisection
    with Newton polishing.  Accepts scalars or arrays.
    """
    y_arr = np.asarray(y, dtype=float)
    scalar = y_arr.ndim == 0
    y_arr = np.atleast_1d(y_arr)
    if np.any(~np.isfinite(y_arr)) or np.any(y_arr <= 0.0):
        raise OutOfRangeError("psi^{-1} is only defined for finite y > 0")
    if model.psi_inverse_fn is not None:
        out = np.asarray(model.psi_inverse_fn(y_arr), dtype=float)
        return float(out[0]) if scalar else out

    lo = np.ones_like(y_arr)
    hi = np.ones_like(y_arr)
    # grow: psi(lo) >= y >= psi(hi)
    for _ in range(2100):
        need_lo = model.psi(lo) < y_arr
        need_hi = model.psi(hi) > y_arr
        if not (need_lo.any() or need_hi.any()):
            break
        lo = np.where(need_lo, lo * 0.5, lo)
        hi = np.where(need_hi, hi * 2.0, hi)
        if np.any(lo < 1e-300) or np.any(hi > 1e300):
            raise OutOfRangeError(f"y outside the range of psi for model {model.name!r}")
    else:  # pragma: no cover - the caps above trigger first
        raise OutOfRangeError("could not bracket psi^{-1}")

    log_lo, log_hi = np.log(lo), np.log(hi)
    x = np.sqrt(lo * hi)
    for _ in range(max_iter):
        x = np.exp(0.5 * (log_lo + log_hi))
        r = model.psi(x) - y_arr
        # decreasing psi: r > 0 means x is too small
        log_lo = np.where(r > 0, np.log(x), log_lo)
        log_hi = np.where(r <= 0, np.log(x), log_hi)
        if np.all(log_hi - log_lo < 1e-15):
            break
    for _ in range(3):
        d = model.dpsi(x)
        step = np.where(d != 0, (model.psi(x) - y_arr) / np.where(d != 0, d, 1.0), 0.0)
        x_new = x - step
        ok = (x_new > 0) & (np.abs(model.psi(x_new) - y_arr) <= np.abs(model.psi(x) - y_arr))
        x = np.where(ok, x_new, x)
    return float(x[0]) if scalar else x


# --------------------------------------------------------------------------
# hypothesis validation


@dataclass(frozen=True)
class ClauseResult:
    name: str
    passed: bool
    worst_violation: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    model: str
    clauses: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def __getitem__(self, name) -> ClauseResult:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "passed": self.passed,
            "clauses": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "worst_violation": c.worst_violation,
                    "detail": c.detail,
                }
                for c in self.clauses
            ],
        }

    def format(self) -> str:
        lines = [f"model: {self.model}"]
        for c in self.clauses:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"  [{flag}] {c.name:<22s} worst={c.worst_violation:.3e} {c.detail}")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _violation(lhs, rhs):
    """Relative amount by which ``lhs <= rhs`` fails (<= 0 when it holds)."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    return np.max((lhs - rhs) / np.maximum(1.0, np.abs(rhs)))


def validate_hypotheses(model: EnergyModel, sample_grid, tol: float = 1e-10) -> ValidationReport:
    """Sample every structural hypothesis on ``model`` over ``sample_grid``.

    Each clause reports its worst relative violation; a clause passes when
    that violation does not exceed ``tol``.
    """
    grid = np.asarray(sample_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("sample grid must be a non-empty 1-d sequence")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0.0):
        raise ValueError("sample grid entries must be finite and strictly positive")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("sample grid must be strictly increasing")

    clauses = []

    def add(name, worst, detail=""):
        worst = float(worst)
        clauses.append(ClauseResult(name, bool(np.isfinite(worst) and worst <= tol), worst, detail))

    H0 = float(model.H(0.0))
    add("H(0)=0", abs(H0))

    Hg = model.H(grid)
    add("H>=0", np.max(-Hg / np.maximum(1.0, np.abs(Hg))))

    if grid.size >= 3:
        # divided second differences on a non-uniform grid
        x0, x1, x2 = grid[:-2], grid[1:-1], grid[2:]
        H0_, H1_, H2_ = Hg[:-2], Hg[1:-1], Hg[2:]
        s01 = (H1_ - H0_) / (x1 - x0)
        s12 = (H2_ - H1_) / (x2 - x1)
        dd = (s12 - s01) / (x2 - x0)
        scale = np.maximum(1.0, np.abs(s01) + np.abs(s12))
        add("H convex", np.max(-dd / scale))
    else:
        add("H convex", 0.0, "grid too short for second differences")

    # superlinear growth: H(u)/u strictly increasing beyond the grid
    u = grid[-1] * 2.0 ** np.arange(0, 21)
    ratio = model.H(u) / u
    inc = np.diff(ratio)
    worst = np.max(-inc / np.maximum(1e-300, np.abs(ratio[1:])))
    strictly = bool(np.all(inc > tol * np.maximum(1.0, np.abs(ratio[1:]))))
    clauses.append(
        ClauseResult(
            "superlinear",
            strictly,
            float(max(worst, 0.0)),
            f"H(u)/u from {ratio[0]:.3e} to {ratio[-1]:.3e}",
        )
    )

    X, Y = np.meshgrid(grid, grid)
    lhs = model.H(X + Y)
    base = 1.0 + model.H(X) + model.H(Y)
    if model.doubling_constant is not None:
        A = model.doubling_constant
        add("doubling", _violation(lhs, A * base), f"A={A:g}")
    else:
        A_est = float(np.max(lhs / base))
        add("doubling", 0.0 if np.isfinite(A_est) else np.inf, f"A unverified, sampled sup={A_est:.3e}")

    hd1 = model.dh(grid)
    hd2 = model.d2h(grid)
    add("h strictly convex", np.max(-hd2 / np.maximum(1e-300, np.abs(hd2))) if np.all(hd2 > 0) else 1.0)
    add("h non-increasing", np.max(hd1 / np.maximum(1.0, np.abs(hd1))))
    ps = model.psi(grid)
    dec = -np.diff(ps)
    add("psi strictly decreasing", 0.0 if np.all(dec > 0) else 1.0, "")

    d2 = model.d2H(grid)
    if np.any(d2 <= 0):
        add("H''>0", 1.0)
    else:
        add("H''>0", 0.0)
    Xg, Ag = np.meshgrid(grid, grid, indexing="ij")
    lhs2 = model.d2H(Ag * Xg)
    rhs_base = model.d2H(Xg)
    if model.f is not None:
        f1_at_1 = float(np.asarray(model.f(1.0)))
        worst = max(_violation(model.f(Ag) * rhs_base, lhs2), abs(f1_at_1 - 1.0))
        add("H'' scaling (f)", worst, "f supplied")
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            f_est = np.min(lhs2 / rhs_base, axis=0)
        add("H'' scaling (f)", 0.0, f"f unverified, sampled inf at alpha=1: {np.interp(1.0, grid, f_est):.3e}")

    lhs3 = model.H(Ag * Xg)
    if model.f1 is not None and model.f2 is not None:
        rhs3 = model.f1(Ag) * model.H(Xg) + model.f2(Ag) * Xg
        at1 = abs(float(np.asarray(model.f1(1.0))) - 1.0) + abs(float(np.asarray(model.f2(1.0))))
        add("scaling (f1,f2)", max(_violation(lhs3, rhs3), at1))
    else:
        add("scaling (f1,f2)", 0.0, "f1, f2 unverified")

    return ValidationReport(model=model.name, clauses=tuple(clauses))

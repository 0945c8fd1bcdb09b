"""Admissible Lagrangians on the circle, one-forms, grids and the discrete action.

Two families are supported:

* ``Kind.MECHANICAL``: ``L(x, v, t) = v**2/2 - V(x, t)`` with ``V`` a
  trigonometric polynomial, 1-periodic in ``x`` and ``t``.
* ``Kind.GENERATING_FUNCTION``: a twist map given by
  ``h(x, X) = (X - x)**2/2 + P(x)`` over one unit time step, where ``X``
  is the lifted image point and ``P`` a trigonometric polynomial in ``x``.

Positions passed to the discrete routines are *lifted* reals; the
circle point is ``X % 1`` and integer parts carry the winding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import GridError, UnsupportedOperation, WindingCapError

TWO_PI = 2.0 * math.pi


class Kind(str, Enum):
    MECHANICAL = "mechanical"
    GENERATING_FUNCTION = "generating_function"


@dataclass(frozen=True)
class TrigPotential:
    """Sum of ``a*cos(2π(jx+kt)) + b*sin(2π(jx+kt))`` over ``terms = ((j, k, a, b), ...)``."""

    terms: tuple = ()

    def __post_init__(self):
        clean = tuple((int(j), int(k), float(a), float(b)) for j, k, a, b in self.terms)
        object.__setattr__(self, "terms", clean)

    @property
    def autonomous(self) -> bool:
        return all(k == 0 for _, k, _, _ in self.terms)

    def _phase(self, j, k, x, t):
        return TWO_PI * (j * np.asarray(x, dtype=float) + k * t)

    def value(self, x, t=0.0):
        out = np.zeros(np.shape(x)) if np.ndim(x) else 0.0
        for j, k, a, b in self.terms:
            ph = self._phase(j, k, x, t)
            out = out + a * np.cos(ph) + b * np.sin(ph)
        return out

    def dx(self, x, t=0.0):
        out = np.zeros(np.shape(x)) if np.ndim(x) else 0.0
        for j, k, a, b in self.terms:
            ph = self._phase(j, k, x, t)
            out = out + TWO_PI * j * (-a * np.sin(ph) + b * np.cos(ph))
        return out

    def dxx(self, x, t=0.0):
        out = np.zeros(np.shape(x)) if np.ndim(x) else 0.0
        for j, k, a, b in self.terms:
            ph = self._phase(j, k, x, t)
            out = out - (TWO_PI * j) ** 2 * (a * np.cos(ph) + b * np.sin(ph))
        return out

    def max_abs_dx(self) -> float:
        return sum(TWO_PI * abs(j) * math.hypot(a, b) for j, _, a, b in self.terms)

    def max_abs_dxx(self) -> float:
        return sum((TWO_PI * j) ** 2 * math.hypot(a, b) for j, _, a, b in self.terms)


@dataclass(frozen=True)
class LagrangianSpec:
    kind: Kind
    potential: TrigPotential = field(default_factory=TrigPotential)
    period: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.period != 1.0:
            raise ValueError("only period 1 is supported")
        if self.kind is Kind.GENERATING_FUNCTION and not self.potential.autonomous:
            raise ValueError("generating-function potentials depend on x only")

    @classmethod
    def mechanical(cls, terms: Iterable = ()) -> "LagrangianSpec":
        return cls(Kind.MECHANICAL, TrigPotential(tuple(terms)))

    @classmethod
    def free(cls) -> "LagrangianSpec":
        return cls.mechanical(())

    @classmethod
    def pendulum(cls, amplitude: float = 1.0, harmonic: int = 1) -> "LagrangianSpec":
        """``V = amplitude * cos(2π harmonic x)``."""
        return cls.mechanical(((harmonic, 0, amplitude, 0.0),))

    @classmethod
    def standard_map(cls, k: float) -> "LagrangianSpec":
        """``h(x, X) = (X-x)²/2 + k/(4π²) cos 2πx`` (Chirikov parameter ``k``)."""
        return cls(Kind.GENERATING_FUNCTION, TrigPotential(((1, 0, k / (4 * math.pi**2), 0.0),)))

    @property
    def autonomous(self) -> bool:
        return self.potential.autonomous

    def check_twist(self, grid: "GridSpec") -> float:
        """Largest sampled mixed derivative of the generating function (must be < 0)."""
        if self.kind is not Kind.GENERATING_FUNCTION:
            raise UnsupportedOperation("twist condition applies to generating functions")
        # d²h/dx dX = -1 identically for this family
        return -1.0


@dataclass(frozen=True)
class GridSpec:
    n_space: int
    n_substeps: int = 1
    winding_cap: int = 2

    def __post_init__(self):
        if self.n_space < 16:
            raise GridError(f"n_space must be >= 16, got {self.n_space}")
        if self.n_substeps < 1:
            raise GridError(f"n_substeps must be >= 1, got {self.n_substeps}")
        if self.winding_cap < 1:
            raise GridError(f"winding_cap must be >= 1, got {self.winding_cap}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_space

    @property
    def dt(self) -> float:
        return 1.0 / self.n_substeps

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_space) / self.n_space

    def windings(self) -> np.ndarray:
        """Winding candidates ordered by the argmin tie-break: 0, -1, 1, -2, 2, ..."""
        out = [0]
        for m in range(1, self.winding_cap + 1):
            out += [-m, m]
        return np.array(out, dtype=np.int64)

    def snap(self, x: float) -> int:
        return int(round(float(x) * self.n_space)) % self.n_space


def check_grid(spec: LagrangianSpec, grid: GridSpec) -> None:
    """Reject grids on which the discrete Lagrangian loses endpoint convexity."""
    if spec.kind is Kind.GENERATING_FUNCTION:
        if grid.n_substeps != 1:
            raise GridError("generating-function kernels need n_substeps == 1")
        return
    dt = grid.dt
    # d²Ld/dX² = 1/dt - dt/4 V_xx must stay positive
    if dt * dt * spec.potential.max_abs_dxx() / 4.0 >= 1.0:
        raise GridError(f"dt={dt} too large for convexity of the midpoint rule")


def smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass(frozen=True, eq=False)
class OneForm:
    """``f(t) * c * g(x) dx`` with unit-mass density ``g`` (uniform when ``None``).

    ``ramp=None`` means ``f ≡ 1``; otherwise ``ramp=(t0, t1)`` and ``f`` is a
    smoothstep from 0 at ``t0`` to 1 at ``t1``.
    """

    cls: float
    density: np.ndarray | None = None
    ramp: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "cls", float(self.cls))
        if self.density is not None:
            g = np.asarray(self.density, dtype=float).copy()
            if g.ndim != 1 or g.size < 16:
                raise GridError("density must be a grid function with >= 16 nodes")
            if np.any(g < 0):
                raise ValueError("density must be nonnegative")
            mass = g.mean()
            if abs(mass - 1.0) > 1e-12:
                raise ValueError(f"density must have unit mass, got {mass!r}")
            g.setflags(write=False)
            object.__setattr__(self, "density", g)
            h = 1.0 / g.size
            nodes = np.concatenate(([0.0], np.cumsum(0.5 * h * (g + np.roll(g, -1)))))
            object.__setattr__(self, "_cum", nodes)
        if self.ramp is not None:
            t0, t1 = (float(v) for v in self.ramp)
            if not t1 > t0:
                raise ValueError("ramp needs t1 > t0")
            object.__setattr__(self, "ramp", (t0, t1))

    @property
    def uniform(self) -> bool:
        return self.density is None

    @property
    def is_zero(self) -> bool:
        return self.cls == 0.0

    def key(self) -> bytes:
        parts = [repr(self.cls).encode(), repr(self.ramp).encode()]
        if self.density is not None:
            parts.append(self.density.tobytes())
        return b"|".join(parts)

    def profile(self, t):
        if self.ramp is None:
            return np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0
        t0, t1 = self.ramp
        return smoothstep((np.asarray(t, dtype=float) - t0) / (t1 - t0))

    def _locate(self, X):
        X = np.asarray(X, dtype=float)
        n = self.density.size
        fl = np.floor(X)
        s = (X - fl) * n
        i = np.minimum(s.astype(np.int64), n - 1)
        return fl, i, s - i

    def cumulative(self, X):
        """Lifted primitive ``G`` of the density: ``G(X + 1) = G(X) + 1``."""
        if self.density is None:
            return np.asarray(X, dtype=float)
        fl, i, s = self._locate(X)
        g = self.density
        g0 = g[i]
        g1 = g[(i + 1) % g.size]
        h = 1.0 / g.size
        return fl + self._cum[i] + h * (g0 * s + 0.5 * (g1 - g0) * s * s)

    def density_at(self, X):
        if self.density is None:
            return np.ones_like(np.asarray(X, dtype=float))
        _, i, s = self._locate(X)
        g = self.density
        return g[i] + (g[(i + 1) % g.size] - g[i]) * s

    def density_slope(self, X):
        if self.density is None:
            return np.zeros_like(np.asarray(X, dtype=float))
        _, i, _ = self._locate(X)
        g = self.density
        return (g[(i + 1) % g.size] - g[i]) * g.size

    def support(self) -> np.ndarray:
        """Boolean grid mask of nodes where the density is positive (all for uniform)."""
        if self.density is None:
            return None
        return self.density > 0


def as_forms(form) -> tuple:
    """Normalize ``None``, a single :class:`OneForm` or a sequence into a tuple of terms."""
    if form is None:
        return ()
    if isinstance(form, OneForm):
        return (form,)
    return tuple(form)


def total_class(form) -> float:
    return float(sum(f.cls for f in as_forms(form)))


def uniform_form(c: float) -> OneForm:
    return OneForm(c)


def _pairing(forms, X, X2, tm):
    out = 0.0
    for f in forms:
        if f.cls == 0.0:
            continue
        out = out + f.profile(tm) * f.cls * (f.cumulative(X2) - f.cumulative(X))
    return out


def _require_mechanical(spec: LagrangianSpec):
    if spec.kind is not Kind.MECHANICAL:
        raise UnsupportedOperation(f"operation needs a mechanical Lagrangian, got {spec.kind.value}")


def eval_lagrangian(spec: LagrangianSpec, x, v, t):
    _require_mechanical(spec)
    v = np.asarray(v, dtype=float) if np.ndim(v) else float(v)
    return 0.5 * v * v - spec.potential.value(x, t)


def twist_lagrangian(spec: LagrangianSpec, form, x, v, t):
    """``L(x, v, t) - Σ f(t) c g(x) v`` over the form terms."""
    out = eval_lagrangian(spec, x, v, t)
    for f in as_forms(form):
        if f.cls:
            out = out - f.profile(t) * f.cls * f.density_at(x) * v
    return out


def block_action(spec: LagrangianSpec, form, X, X2, t, dt):
    """Vectorized discrete action between lifted positions ``X`` and ``X2`` on ``[t, t+dt]``."""
    forms = as_forms(form)
    X = np.asarray(X, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    disp = X2 - X
    tm = t + 0.5 * dt
    if spec.kind is Kind.MECHANICAL:
        vel = disp / dt
        base = dt * (0.5 * vel * vel - spec.potential.value(X + 0.5 * disp, tm))
    else:
        if np.any(np.abs(np.asarray(dt) - 1.0) > 1e-12):
            raise UnsupportedOperation("generating functions act over unit time steps only")
        base = 0.5 * disp * disp + spec.potential.value(X, 0.0)
    return base - _pairing(forms, X, X2, tm)


def discrete_lagrangian(spec, form, x, x2, m, t, dt, winding_cap: int = 2):
    """Block action from circle point ``x`` to ``x2`` with winding ``m``."""
    if abs(int(m)) > winding_cap:
        raise WindingCapError(f"|m|={abs(int(m))} exceeds winding cap {winding_cap}")
    return float(block_action(spec, form, float(x), float(x2) + int(m), t, dt))


def block_derivatives(spec: LagrangianSpec, form, X, X2, t, dt, include_forms: bool = True):
    """First and second partials ``(D1, D2, D11, D12, D22)`` of :func:`block_action`."""
    X = np.asarray(X, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    disp = X2 - X
    tm = t + 0.5 * dt
    pot = spec.potential
    if spec.kind is Kind.MECHANICAL:
        mid = X + 0.5 * disp
        vx = pot.dx(mid, tm)
        vxx = pot.dxx(mid, tm)
        d1 = -disp / dt - 0.5 * dt * vx
        d2 = disp / dt - 0.5 * dt * vx
        d12 = -1.0 / dt - 0.25 * dt * vxx
        d11 = 1.0 / dt - 0.25 * dt * vxx
        d22 = d11.copy() if np.ndim(d11) else d11
    else:
        d1 = -disp + pot.dx(X, 0.0)
        d2 = disp.copy() if np.ndim(disp) else disp
        d11 = 1.0 + pot.dxx(X, 0.0)
        d12 = -1.0 + 0.0 * disp
        d22 = 1.0 + 0.0 * disp
    if include_forms:
        for f in as_forms(form):
            if not f.cls:
                continue
            w = f.profile(tm) * f.cls
            d1 = d1 + w * f.density_at(X)
            d2 = d2 - w * f.density_at(X2)
            d11 = d11 + w * f.density_slope(X)
            d22 = d22 - w * f.density_slope(X2)
    return d1, d2, d11, d12, d22


def momentum_offset(form, x, t):
    """``Σ f(t) c g(x)``: shift between velocity and twisted momentum."""
    out = 0.0
    for f in as_forms(form):
        if f.cls:
            out = out + f.profile(t) * f.cls * float(f.density_at(x))
    return out


def flow_step(spec: LagrangianSpec, form, x, v, t, dt, tol: float = 1e-14, max_iter: int = 50):
    """One step of the variational integrator generated by :func:`block_action`.

    Momentum ``p = v - Σ f c g(x)``; the new point solves ``D1 Ld(x, x') = -p``
    and the new momentum is ``D2 Ld(x, x')``. Returns lifted position and velocity.
    """
    _require_mechanical(spec)
    p = float(v) - momentum_offset(form, x, t)
    X = float(x)
    X2 = X + p * dt
    for _ in range(max_iter):
        d1, _, _, d12, _ = block_derivatives(spec, form, X, X2, t, dt)
        r = float(d1) + p
        step = r / float(d12)
        X2 -= step
        if abs(step) < tol:
            break
    _, d2, _, _, _ = block_derivatives(spec, form, X, X2, t, dt)
    v2 = float(d2) + momentum_offset(form, X2, t + dt)
    return X2, v2

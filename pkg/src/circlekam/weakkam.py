"""Lax–Oleinik iteration, critical values, α/β tables, rotation numbers and regularity."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _minplus as mp
from .action import ActionKernel, minimize_endpoint, period_kernel, section_kernel
from .errors import CircleKamError, ConvergenceError
from .model import GridSpec, LagrangianSpec, as_forms, total_class, uniform_form

log = logging.getLogger(__name__)

K_MAX = 64


class CriticalValueWarning(UserWarning):
    pass


def lax_oleinik_apply(kernel: ActionKernel | np.ndarray, u) -> np.ndarray:
    """``(T u)(x_j) = min_i u(x_i) + kernel(i, j)``."""
    vals = kernel.values if isinstance(kernel, ActionKernel) else np.asarray(kernel)
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size != vals.shape[0]:
        raise ValueError(f"grid function of length {vals.shape[0]} expected, got shape {u.shape}")
    return mp.vec_matrix(u, vals)[0]


def lax_oleinik_forward(kernel, u) -> np.ndarray:
    """Dual operator ``(T⁺ u)(x_i) = max_j u(x_j) - kernel(i, j)``."""
    vals = kernel.values if isinstance(kernel, ActionKernel) else np.asarray(kernel)
    return -mp.matrix_vec(vals, -np.asarray(u, dtype=float))[0]


@dataclass(frozen=True, eq=False)
class WeakKamSolution:
    u: np.ndarray
    u_plus: np.ndarray
    critical_value: float
    cls: float
    residual: float
    kernel: ActionKernel | None = None
    alpha_karp: float = float("nan")
    alpha_vi: float = float("nan")
    vi_period: int = 0
    converged: bool = True
    warnings: tuple = ()

    @property
    def critical_kernel(self) -> np.ndarray:
        return self.kernel.values + self.critical_value


def karp_alpha(values: np.ndarray) -> float:
    return -float(mp.karp_min_cycle_mean(np.ascontiguousarray(values)))


def relative_value_iteration(values: np.ndarray, max_iter: int = 20000, tol: float = 1e-10, q_max: int = K_MAX, u0=None):
    """Iterate ``u <- T u - min T u`` until ``u`` repeats with some period ``q <= q_max``.

    Returns ``(alpha, u, q, converged)`` with ``alpha = -mean`` of the last ``q``
    subtracted constants.
    """
    n = values.shape[0]
    u = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float) - np.min(u0)
    ring = np.empty((q_max + 1, n))
    consts = np.empty(max_iter)
    for it in range(max_iter):
        w = mp.vec_matrix(u, values)[0]
        m = float(w.min())
        u = w - m
        consts[it] = m
        ring[it % (q_max + 1)] = u
        if it >= 2 * q_max:
            for q in range(1, q_max + 1):
                if np.max(np.abs(u - ring[(it - q) % (q_max + 1)])) < tol:
                    return -float(consts[it - q + 1 : it + 1].mean()), u, q, True
    return -float(consts[max_iter - q_max : max_iter].mean()), u, 0, False


def _invariant_hull(values, u, q):
    """``min_k T^k u`` over one period of the orbit: a fixed point of the critical operator."""
    out = u.copy()
    w = u
    for _ in range(q - 1):
        w = mp.vec_matrix(w, values)[0]
        out = np.minimum(out, w)
    return out - out.min()


def critical_value(spec: LagrangianSpec, form, grid: GridSpec, cache=None, max_iter: int = 20000):
    """Critical value ``α(c)`` by Karp's min cycle mean, cross-checked by relative value iteration.

    Returns ``(alpha, WeakKamSolution)``.  If the two routes disagree by more
    than ``1e-6`` (or value iteration does not lock on to a periodic orbit), a
    :class:`CriticalValueWarning` is issued and Karp's value is used.
    """
    forms = as_forms(form)
    if any(f.ramp is not None for f in forms):
        raise CircleKamError("critical values need a stationary form")
    kernel = period_kernel(spec, forms, grid, cache=cache)
    vals = kernel.values
    a_karp = karp_alpha(vals)
    a_vi, u, q, ok = relative_value_iteration(vals, max_iter=max_iter)
    notes = []
    if not ok:
        notes.append("value iteration did not become periodic; using Karp")
    elif abs(a_vi - a_karp) > 1e-6:
        notes.append(f"value iteration α={a_vi!r} disagrees with Karp α={a_karp!r}; using Karp")
    for msg in notes:
        warnings.warn(msg, CriticalValueWarning, stacklevel=2)
    alpha = a_karp
    crit = vals + alpha
    u_fix = _invariant_hull(crit, u, max(q, 1)) if ok else u
    res = float(np.max(np.abs(lax_oleinik_apply(crit, u_fix) - u_fix)))
    # forward solution from the dual operator
    crit_t = np.ascontiguousarray(crit.T)
    _, w, qw, okw = relative_value_iteration(crit_t, max_iter=max_iter)
    if okw and qw > 1:
        w = _invariant_hull(crit_t, w, qw)
    up = -w
    up = up - up.min()
    sol = WeakKamSolution(
        u=u_fix, u_plus=up, critical_value=alpha, cls=total_class(forms), residual=res, kernel=kernel,
        alpha_karp=a_karp, alpha_vi=a_vi, vi_period=q, converged=ok and not notes, warnings=tuple(notes),
    )
    return alpha, sol


@dataclass(frozen=True)
class AlphaTable:
    samples: tuple
    beta_samples: tuple
    warnings: tuple = ()

    @property
    def c(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def alpha(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])

    @property
    def alpha_prime(self) -> np.ndarray:
        return np.array([s[2] for s in self.samples])

    def beta(self, omega):
        """Discrete Fenchel transform ``max_c (c ω - α(c))`` over the sampled classes."""
        om = np.atleast_1d(np.asarray(omega, dtype=float))
        out = np.max(self.c[None, :] * om[:, None] - self.alpha[None, :], axis=1)
        return out if np.ndim(omega) else float(out[0])

    def alpha_from_beta(self, c):
        om = np.array([s[0] for s in self.beta_samples])
        be = np.array([s[1] for s in self.beta_samples])
        cc = np.atleast_1d(np.asarray(c, dtype=float))
        out = np.max(cc[:, None] * om[None, :] - be[None, :], axis=1)
        return out if np.ndim(c) else float(out[0])

    def midpoint_convex(self, tol: float = 1e-6) -> bool:
        """Convexity on every adjacent triple (second divided differences ≥ 0)."""
        c, a = self.c, self.alpha
        for k in range(1, c.size - 1):
            lam = (c[k] - c[k - 1]) / (c[k + 1] - c[k - 1])
            if a[k] > (1 - lam) * a[k - 1] + lam * a[k + 1] + tol:
                return False
        return True


def _alpha_job(args):
    spec, c, grid, cache = args
    if isinstance(cache, str):
        from .cache import KernelCache

        cache = KernelCache(cache)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        a, sol = critical_value(spec, uniform_form(c), grid, cache=cache)
    return a, tuple(str(w.message) for w in caught)


def alpha_function(spec: LagrangianSpec, c_grid, grid: GridSpec, workers: int = 1, cache=None) -> AlphaTable:
    """Critical values over ``c_grid`` with central-difference α′ and the Fenchel dual β."""
    cs = np.array(sorted(float(c) for c in c_grid))
    if cs.size == 0:
        raise ValueError("empty class grid")
    jobs = [(spec, float(c), grid, cache) for c in cs]
    if workers > 1 and len(jobs) > 1:
        # worker processes open their own handle on the cache directory
        root = None if cache is None else str(cache.root)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_alpha_job, [(s, c, g, root) for s, c, g, _ in jobs]))
    else:
        results = [_alpha_job(j) for j in jobs]
    al = np.array([r[0] for r in results])
    notes = tuple(f"c={c!r}: {m}" for c, r in zip(cs, results) for m in r[1])
    if cs.size > 1:
        ap = np.gradient(al, cs)
        omega = np.diff(al) / np.diff(cs)
    else:
        ap = np.array([np.nan])
        omega = np.array([], dtype=float)
    beta = [float(np.max(cs * w - al)) for w in omega]
    return AlphaTable(
        samples=tuple((float(c), float(a), float(d)) for c, a, d in zip(cs, al, ap)),
        beta_samples=tuple((float(w), b) for w, b in zip(omega, beta)),
        warnings=notes,
    )


def rotation_number(spec: LagrangianSpec, form, grid: GridSpec, horizon: int = 100, cache=None) -> float:
    """Mean winding per period of a free-endpoint minimizer over ``horizon`` periods."""
    if horizon < 10:
        raise ValueError(f"horizon must be at least 10 periods, got {horizon}")
    k = period_kernel(spec, form, grid, cache=cache)
    kernels = [k.shifted(p) for p in range(int(horizon))]
    curve = minimize_endpoint(kernels)
    # measure over the central half to keep free-endpoint transients out
    k = grid.n_substeps
    a, b = (horizon // 4) * k, (horizon - horizon // 4) * k
    X = curve.positions
    return float((X[b] - X[a]) / (curve.times[b] - curve.times[a]))


@dataclass(frozen=True)
class RegularityReport:
    regular: bool
    oscillation: float
    period_detected: int
    iterations: int
    per_section: tuple = ()


def _regularity_on(values, max_n, u0, k_max, tol):
    n = values.shape[0]
    u = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float) - np.min(u0)
    burn = max_n // 2
    tail = []
    for it in range(max_n):
        w = mp.vec_matrix(u, values)[0]
        u = w - w.min()
        if it >= burn:
            tail.append(u)
    tail = np.array(tail)
    osc = float(np.max(np.abs(tail - tail[-1])))
    if osc < tol:
        return True, osc, 1
    for k in range(2, min(k_max, len(tail) - 1) + 1):
        if float(np.max(np.abs(tail[k:] - tail[:-k]))) < tol:
            return False, osc, k
    return False, osc, 0


def regularity_test(spec: LagrangianSpec, form, grid: GridSpec, max_n: int = 400, u0=None,
                    k_max: int = K_MAX, tol: float = 1e-6, sections: bool = False, cache=None) -> RegularityReport:
    """Convergence test for the normalized Lax–Oleinik iterates ``T^n u0 - min``.

    ``regular`` when the sup-norm oscillation over the second half of the run is
    below ``tol``; otherwise ``period_detected`` is the least ``k <= k_max`` for
    which the ``k``-step subsequences converge (0 if none).
    """
    kernel = period_kernel(spec, form, grid, cache=cache)
    reg, osc, per = _regularity_on(kernel.values, max_n, u0, k_max, tol)
    extra = ()
    if sections and grid.n_substeps > 1 and not (spec.autonomous and all(f.ramp is None for f in as_forms(form))):
        rows = []
        for s in range(grid.n_substeps):
            ks = section_kernel(kernel, s)
            r, o, p = _regularity_on(ks.values, max_n, u0, k_max, tol)
            rows.append((s, r, o, p))
        extra = tuple(rows)
    return RegularityReport(reg, osc, per, max_n, extra)

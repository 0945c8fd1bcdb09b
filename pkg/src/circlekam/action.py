"""Min-plus action kernels on the spatial grid and discrete minimizing curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from . import _minplus as mp
from .cache import kernel_key
from .errors import CompositionError, ConvergenceError, GridError
from .model import (
    GridSpec,
    Kind,
    LagrangianSpec,
    OneForm,
    as_forms,
    block_action,
    block_derivatives,
    check_grid,
    total_class,
)

TIME_TOL = 1e-9


@dataclass(eq=False)
class ActionKernel:
    """Minimal block actions ``values[i, j]`` from ``x_i`` at ``t_start`` to ``x_j`` at ``t_end``.

    ``winding[i, j]`` is the total winding of the minimizing chain.  Composite
    kernels keep ``via`` (the argmin intermediate node) and their two factors so
    that minimizers can be backtracked down to single substeps.
    """

    values: np.ndarray
    winding: np.ndarray
    t_start: float
    t_end: float
    form: tuple = ()
    grid: GridSpec | None = None
    spec: LagrangianSpec | None = None
    via: np.ndarray | None = None
    left: "ActionKernel | None" = None
    right: "ActionKernel | None" = None
    identity: bool = False
    phase: float = 0.0
    _blocks: tuple | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def cls(self) -> float:
        return total_class(self.form)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def leaves(self) -> list:
        if self.is_leaf:
            return [] if self.identity else [self]
        return self.left.leaves() + self.right.leaves()

    def shifted(self, dt: float) -> "ActionKernel":
        """Same arrays relabelled to start ``dt`` later."""
        if dt == 0:
            return self
        return replace(
            self,
            t_start=self.t_start + dt,
            t_end=self.t_end + dt,
            left=None if self.left is None else self.left.shifted(dt),
            right=None if self.right is None else self.right.shifted(dt),
            _blocks=self._blocks,
        )

    def blocks(self):
        """Per-winding block actions ``(mvals, blocks[nb, N, N])`` of a substep kernel."""
        if not self.is_leaf or self.identity:
            raise CompositionError("winding blocks exist only for substep kernels")
        if self._blocks is None:
            self._blocks = _winding_blocks(self.spec, self.form, self.phase, self.grid)
        return self._blocks


def _winding_blocks(spec, forms, t, grid):
    x = grid.x
    mvals = grid.windings()
    out = np.empty((mvals.size, grid.n_space, grid.n_space))
    for b, m in enumerate(mvals):
        out[b] = block_action(spec, forms, x[:, None], x[None, :] + m, t, grid.dt)
    return mvals, out


def identity_kernel(n: int, t: float = 0.0) -> ActionKernel:
    vals = np.full((n, n), np.inf)
    np.fill_diagonal(vals, 0.0)
    return ActionKernel(vals, np.zeros((n, n), dtype=np.int64), t, t, identity=True)


def _leaf_from_blocks(spec, forms, t, grid, mvals, blocks) -> ActionKernel:
    vals = blocks[0].copy()
    wind = np.full(vals.shape, mvals[0], dtype=np.int64)
    # candidates come ordered 0, -1, 1, -2, 2: strict < keeps the smaller |m| then smaller m
    for b in range(1, mvals.size):
        better = blocks[b] < vals
        vals[better] = blocks[b][better]
        wind[better] = mvals[b]
    vals.setflags(write=False)
    wind.setflags(write=False)
    return ActionKernel(
        vals, wind, float(t), float(t) + grid.dt, tuple(forms), grid, spec, phase=float(t), _blocks=(mvals, blocks)
    )


def substep_kernel(spec: LagrangianSpec, form, t: float, grid: GridSpec, keep_blocks: bool = False) -> ActionKernel:
    """Minimal block action over ``[t, t + 1/K]`` taken over windings ``|m| <= m_max``."""
    check_grid(spec, grid)
    forms = as_forms(form)
    mvals, blocks = _winding_blocks(spec, forms, t, grid)
    k = _leaf_from_blocks(spec, forms, t, grid, mvals, blocks)
    if not keep_blocks:
        k._blocks = None
    return k


def minplus_compose(a: ActionKernel, b: ActionKernel) -> ActionKernel:
    if a.n != b.n:
        raise CompositionError(f"grid mismatch: {a.n} vs {b.n}")
    if abs(a.t_end - b.t_start) > TIME_TOL:
        raise CompositionError(f"time mismatch: first ends at {a.t_end}, second starts at {b.t_start}")
    vals, via = mp.minplus_product(a.values, b.values)
    rows = np.arange(a.n)[:, None]
    cols = np.arange(a.n)[None, :]
    wind = a.winding[rows, via] + b.winding[via, cols]
    vals.setflags(write=False)
    wind.setflags(write=False)
    via.setflags(write=False)
    form = a.form if a.form == b.form or b.identity else (b.form if a.identity else a.form + b.form)
    return ActionKernel(
        vals, wind, a.t_start, b.t_end, form, a.grid or b.grid, a.spec or b.spec, via=via, left=a, right=b
    )


def compose_all(kernels: Sequence[ActionKernel]) -> ActionKernel:
    if not kernels:
        raise CompositionError("empty kernel sequence")
    out = kernels[0]
    for k in kernels[1:]:
        out = minplus_compose(out, k)
    return out


def localize_forms(forms, t0: float) -> tuple:
    """Express ramps relative to ``t0``; drop terms that vanish on ``[t0, t0+1]`` and freeze saturated ramps."""
    out = []
    for f in forms:
        if f.cls == 0.0:
            continue
        if f.ramp is None:
            out.append(f)
            continue
        a, b = f.ramp[0] - t0, f.ramp[1] - t0
        if b <= 0.0:
            out.append(OneForm(f.cls, f.density))
        elif a >= 1.0:
            continue
        else:
            out.append(OneForm(f.cls, f.density, (a, b)))
    return tuple(out)


_MEMO: dict = {}
_MEMO_MAX = 64


def _fold_arrays(kernel: ActionKernel) -> dict:
    leaves = kernel.leaves()
    vias = []
    node = kernel
    while not node.is_leaf:
        vias.append(node.via)
        node = node.left
    vias.reverse()
    return {
        "leaf_values": np.stack([lf.values for lf in leaves]),
        "leaf_winding": np.stack([lf.winding for lf in leaves]),
        "vias": np.stack(vias) if vias else np.zeros((0, kernel.n, kernel.n), dtype=np.int64),
    }


def _compose_known(a, b, vals, via):
    rows = np.arange(a.n)[:, None]
    cols = np.arange(a.n)[None, :]
    wind = a.winding[rows, via] + b.winding[via, cols]
    for arr in (vals, wind, via):
        arr.setflags(write=False)
    return ActionKernel(vals, wind, a.t_start, b.t_end, a.form, a.grid, a.spec, via=via, left=a, right=b)


def period_kernel(spec: LagrangianSpec, form, grid: GridSpec, t0: float = 0.0, cache=None) -> ActionKernel:
    """Left fold of the ``K`` substep kernels covering ``[t0, t0 + 1]`` (``t0`` an integer).

    Kernels are computed at phase 0 with ramps expressed in local time, so a
    stationary form gives bit-identical kernels for every period.
    """
    check_grid(spec, grid)
    if abs(t0 - round(t0)) > TIME_TOL:
        raise CompositionError("period kernels start at integer times")
    forms = localize_forms(as_forms(form), float(t0))
    key = kernel_key(spec, forms, grid, 0.0)
    base = _MEMO.get(key)
    if base is None and cache is not None:
        arrays = cache.load(key)
        if arrays is not None:
            base = _rebuild(arrays, spec, forms, grid)
    if base is None:
        stationary = all(f.ramp is None for f in forms)
        if spec.autonomous and stationary:
            leaf = substep_kernel(spec, forms, 0.0, grid)
            leaves = [leaf.shifted(s * grid.dt) for s in range(grid.n_substeps)]
            for s, lf in enumerate(leaves):
                lf.phase = s * grid.dt
        else:
            leaves = [substep_kernel(spec, forms, s * grid.dt, grid) for s in range(grid.n_substeps)]
        base = compose_all(leaves)
        if cache is not None:
            cache.store(key, _fold_arrays(base))
    if len(_MEMO) >= _MEMO_MAX:
        _MEMO.pop(next(iter(_MEMO)))
    _MEMO[key] = base
    return base.shifted(float(round(t0)))


def _rebuild(arrays, spec, forms, grid) -> ActionKernel:
    dt = grid.dt
    leaves = []
    for s in range(arrays["leaf_values"].shape[0]):
        v = np.array(arrays["leaf_values"][s])
        w = np.array(arrays["leaf_winding"][s], dtype=np.int64)
        v.setflags(write=False)
        w.setflags(write=False)
        leaves.append(ActionKernel(v, w, s * dt, (s + 1) * dt, forms, grid, spec, phase=s * dt))
    out = leaves[0]
    for s, lf in enumerate(leaves[1:]):
        via = np.array(arrays["vias"][s], dtype=np.int64)
        rows = np.arange(out.n)[:, None]
        vals = out.values[rows, via] + lf.values[via, np.arange(out.n)[None, :]]
        out = _compose_known(out, lf, vals, via)
    return out


def clear_memo() -> None:
    _MEMO.clear()


def section_kernel(period: ActionKernel, section: int) -> ActionKernel:
    """Period kernel starting at substep ``section`` (cyclic rotation of the substep sequence)."""
    leaves = period.leaves()
    k = len(leaves)
    section %= k
    if section == 0:
        return period
    dur = period.duration
    seq = leaves[section:] + [lf.shifted(dur) for lf in leaves[:section]]
    return compose_all(seq)


def kernel_power(kernel: ActionKernel, n: int) -> ActionKernel:
    out = kernel
    for p in range(1, n):
        out = minplus_compose(out, kernel.shifted(p * kernel.duration))
    return out


def kernel_lipschitz(values: np.ndarray) -> float:
    """Discrete Lipschitz constant of a kernel in each argument (circular differences)."""
    n = values.shape[0]
    fin = np.where(np.isfinite(values), values, np.nan)
    dc = np.nanmax(np.abs(np.roll(fin, -1, axis=1) - fin))
    dr = np.nanmax(np.abs(np.roll(fin, -1, axis=0) - fin))
    return float(max(dc, dr) * n)


def expand(kernel: ActionKernel, i: int, j: int) -> list:
    """Substep chain ``[(leaf, i, j, m), ...]`` realizing ``kernel.values[i, j]``."""
    out = []
    stack = [(kernel, int(i), int(j))]
    while stack:
        k, a, b = stack.pop()
        if k.is_leaf:
            if not k.identity:
                out.append((k, a, b, int(k.winding[a, b])))
            continue
        v = int(k.via[a, b])
        stack.append((k.right, v, b))
        stack.append((k.left, a, v))
    return out


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    """Lifted positions ``positions[s]`` at ``times[s]``; ``action`` is the summed block action."""

    times: np.ndarray
    positions: np.ndarray
    action: float
    nodes: np.ndarray | None = None

    @property
    def windings(self) -> np.ndarray:
        return np.diff(np.floor(self.positions + 1e-12)).astype(np.int64)

    @property
    def rotation(self) -> float:
        return float((self.positions[-1] - self.positions[0]) / (self.times[-1] - self.times[0]))

    @property
    def samples(self) -> list:
        w = list(self.windings) + [0]
        return [(float(t), float(x % 1.0), int(m)) for t, x, m in zip(self.times, self.positions, w)]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def velocities(self) -> np.ndarray:
        """Centered finite-difference velocities (one-sided at the ends)."""
        return np.gradient(self.positions, self.times)


def _chain_to_curve(chain, x0_lift: float, n: int) -> DiscreteCurve:
    times = [chain[0][0].t_start]
    pos = [x0_lift]
    nodes = [chain[0][1]]
    action = 0.0
    for leaf, i, j, m in chain:
        pos.append(pos[-1] + (j - i) / n + m)
        times.append(leaf.t_end)
        nodes.append(j)
        action += float(leaf.values[i, j])
    return DiscreteCurve(np.array(times), np.array(pos), action, np.array(nodes, dtype=np.int64))


def dp_nodes(kernels: Sequence[ActionKernel], i0=None, i_end=None):
    """Dynamic programming over a kernel sequence; returns boundary nodes and optimal value."""
    if not kernels:
        raise CompositionError("empty kernel sequence")
    n = kernels[0].n
    for a, b in zip(kernels, kernels[1:]):
        if abs(a.t_end - b.t_start) > TIME_TOL:
            raise CompositionError(f"kernels not contiguous at t={a.t_end}")
    if i0 is None:
        u = np.zeros(n)
    else:
        u = np.full(n, np.inf)
        u[i0] = 0.0
    preds = []
    for k in kernels:
        u, p = mp.vec_matrix(u, k.values)
        preds.append(p)
    end = int(np.argmin(u)) if i_end is None else int(i_end)
    value = float(u[end])
    path = [end]
    for p in reversed(preds):
        path.append(int(p[path[-1]]))
    path.reverse()
    return path, value


def minimize_endpoint(kernels: Sequence[ActionKernel], x_start=None, x_end=None) -> DiscreteCurve:
    """Minimizer through a time-contiguous kernel sequence; ``None`` endpoints are free."""
    kernels = list(kernels)
    if not kernels:
        raise CompositionError("empty kernel sequence")
    grid = kernels[0].grid
    n = kernels[0].n
    i0 = None if x_start is None else int(round(float(x_start) * n)) % n
    i1 = None if x_end is None else int(round(float(x_end) * n)) % n
    path, value = dp_nodes(kernels, i0, i1)
    chain = []
    for k, a, b in zip(kernels, path, path[1:]):
        chain.extend(expand(k, a, b))
    return _chain_to_curve(chain, path[0] / n, n)


def curve_action(spec: LagrangianSpec, form, curve: DiscreteCurve) -> float:
    t = curve.times
    seg = block_action(spec, as_forms(form), curve.positions[:-1], curve.positions[1:], t[:-1], np.diff(t))
    return float(np.sum(seg))


def _segment_actions(spec, forms, X, t, dt):
    return block_action(spec, forms, X[:-1], X[1:], t[:-1], dt)


def refine_curve(spec: LagrangianSpec, form, curve: DiscreteCurve, tol: float = 1e-10, max_sweeps: int = 500) -> DiscreteCurve:
    """Polish interior positions of a dp minimizer off the grid; endpoints stay fixed.

    Each sweep takes a damped Newton step on the tridiagonal Hessian of the
    discrete action (coordinate-wise Newton when the Hessian is not positive
    definite) with Armijo backtracking, so the action never increases.
    """
    forms = as_forms(form)
    X = np.array(curve.positions, dtype=float)
    t = np.asarray(curve.times, dtype=float)
    if X.size < 3:
        return curve
    dt = np.diff(t)
    if spec.kind is Kind.GENERATING_FUNCTION and np.any(np.abs(dt - 1.0) > 1e-12):
        raise GridError("generating-function curves use unit steps")

    def total(Y):
        return float(np.sum(_segment_actions(spec, forms, Y, t, dt)))

    S = total(X)
    S_in = S
    for _ in range(max_sweeps):
        d1, d2, d11, d12, d22 = block_derivatives(spec, forms, X[:-1], X[1:], t[:-1], dt)
        g = d2[:-1] + d1[1:]
        diag = d22[:-1] + d11[1:]
        off = d12[1:-1]
        step = None
        if diag.size:
            ab = np.zeros((2, diag.size))
            ab[1] = diag
            ab[0, 1:] = off
            try:
                step = -solveh_banded(ab, g)
            except (LinAlgError, ValueError):
                step = None
        if step is None or not np.all(np.isfinite(step)):
            step = np.where(diag > 0, -g / np.where(diag > 0, diag, 1.0), -g)
        slope = float(g @ step)
        if slope >= 0:
            step = -g
            slope = -float(g @ g)
        lam = 1.0
        accepted = False
        while lam > 1e-12:
            Y = X.copy()
            Y[1:-1] += lam * step
            S_new = total(Y)
            if S_new <= S + 1e-4 * lam * slope:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        upd = lam * float(np.max(np.abs(step)))
        X, S = Y, S_new
        if upd < tol:
            break
    if S > S_in:
        return curve
    return DiscreteCurve(t.copy(), X, S, curve.nodes)

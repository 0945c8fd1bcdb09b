"""Mañé potentials, Peierls barriers and the Aubry / Mañé / Mather / G sets.

Barriers live on the circle grid at a fixed time section.  Heteroclinic
calibration between consecutive Aubry points is tested on the lifted
configuration space (the real line), where each lift of an Aubry point is a
separate target; this is what lets the separatrices of a pendulum fill the
circle while a hyperbolic twist-map orbit leaves gaps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from . import _minplus as mp
from .action import (
    ActionKernel,
    DiscreteCurve,
    compose_all,
    kernel_lipschitz,
    minplus_compose,
    period_kernel,
    section_kernel,
)
from .errors import AubryInconsistency, CircleKamError
from .model import GridSpec, Kind, LagrangianSpec, as_forms, total_class
from .weakkam import K_MAX, WeakKamSolution, critical_value

PHI_TOL = 1e-10
CRIT_TOL = 1e-9
ROT_MATCH = 0.02


class SetKind(str, Enum):
    AUBRY = "aubry"
    MANE = "mane"
    MATHER = "mather"
    GSET = "g"


class CurveClass(str, Enum):
    STATIC = "Static"
    SEMI_STATIC = "SemiStatic"
    MINIMIZING_ONLY = "MinimizingOnly"
    NOT_MINIMIZING = "NotMinimizing"


@dataclass(frozen=True)
class Potential:
    values: np.ndarray
    converged: bool
    n_used: int


def _values(k):
    return k.values if isinstance(k, ActionKernel) else np.asarray(k, dtype=float)


def mane_potential(critical_kernel, n_max: int = 4096, method: str = "doubling") -> Potential:
    """Entrywise minimum of the min-plus powers ``F, F², ..., F^n``.

    ``method="doubling"`` squares the running minimum, covering path lengths
    up to ``2^k`` after ``k`` rounds; ``method="powers"`` adds one power at a
    time.  Converged when a further round changes no entry by more than 1e-10.
    """
    f = np.ascontiguousarray(_values(critical_kernel))
    if method == "doubling":
        p = f.copy()
        length = 1
        while True:
            q = np.minimum(p, mp.minplus_product_values(p, p))
            change = float(np.max(p - q))
            p = q
            length *= 2
            if change <= PHI_TOL:
                return Potential(p, True, length)
            if length >= n_max:
                return Potential(p, False, length)
    if method == "powers":
        p = f.copy()
        power = f
        for n in range(2, n_max + 1):
            power = mp.minplus_product_values(power, f)
            q = np.minimum(p, power)
            change = float(np.max(p - q))
            p = q
            if change <= PHI_TOL and n > f.shape[0]:
                return Potential(p, True, n)
        return Potential(p, False, n_max)
    raise ValueError(f"unknown method {method!r}")


def peierls_barrier(critical_kernel, n_min: int = 50, n_max: int = 400, stride: int = 1):
    """Running minimum of ``F^n`` over ``n in [n_min, n_max]`` (step ``stride``).

    Returns ``(h, regular)`` where ``regular`` says the tail minimum equals the
    tail maximum within 1e-6 at every entry.
    """
    f = np.ascontiguousarray(_values(critical_kernel))
    power = f.copy()
    lo = np.full(f.shape, np.inf)
    hi = np.full(f.shape, -np.inf)
    for n in range(1, n_max + 1):
        if n > 1:
            power = mp.minplus_product_values(power, f)
        if n >= n_min and (n - n_min) % stride == 0:
            lo = np.minimum(lo, power)
            hi = np.maximum(hi, power)
    return lo, bool(np.max(hi - lo) <= 1e-6)


def barrier_from_potential(phi: np.ndarray, crit_tol: float = CRIT_TOL) -> np.ndarray:
    """``h(x, y) = min_z Φ*(x, z) + Φ*(z, y)`` over nodes ``z`` on critical cycles.

    ``Φ*`` is ``Φ`` with a zero diagonal (the empty path); on a finite graph this
    is the liminf of ``F^n`` since long paths loop on a zero-mean cycle.
    """
    crit = np.flatnonzero(np.diag(phi) <= crit_tol)
    if crit.size == 0:
        raise AubryInconsistency("no node lies on a critical cycle")
    star = phi.copy()
    np.fill_diagonal(star, np.minimum(np.diag(star), 0.0))
    left = np.ascontiguousarray(star[:, crit])
    right = np.ascontiguousarray(star[crit, :])
    return mp.minplus_product_values(left, right)


@dataclass(frozen=True, eq=False)
class BarrierField:
    phi: np.ndarray
    h: np.ndarray
    d: np.ndarray
    d_tilde: np.ndarray
    section: int
    cls: float
    n_used: int
    alpha: float
    kernel: ActionKernel
    spec: LagrangianSpec
    form: tuple
    grid: GridSpec
    converged: bool = True
    lipschitz: float = 0.0

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def critical(self) -> np.ndarray:
        return self.kernel.values + self.alpha

    @property
    def tol(self) -> float:
        """Default detection threshold ``10 Lip(F) / N²``.

        Barrier defects along calibrated chains are second order in the grid
        spacing, since snapping a minimizer to the grid costs a quadratic amount.
        """
        return 10.0 * self.lipschitz / self.n**2

    @property
    def aubry_tol(self) -> float:
        return self.tol

    @property
    def coarse_tol(self) -> float:
        """First-order bound ``10 Lip(F) / N`` on the pointwise accuracy of barrier values."""
        return 10.0 * self.lipschitz / self.n


def compute_barriers(spec: LagrangianSpec, form, grid: GridSpec, section: int = 0,
                     solution: WeakKamSolution | None = None, n_max: int = 4096, cache=None) -> BarrierField:
    forms = as_forms(form)
    if solution is None:
        alpha, solution = critical_value(spec, forms, grid, cache=cache)
    alpha = solution.critical_value
    kern = section_kernel(solution.kernel, section)
    crit = kern.values + alpha
    pot = mane_potential(crit, n_max=n_max)
    phi = pot.values
    h = barrier_from_potential(phi)
    return BarrierField(
        phi=phi, h=h, d=h + h.T, d_tilde=phi + phi.T, section=int(section) % grid.n_substeps,
        cls=total_class(forms), n_used=pot.n_used, alpha=alpha, kernel=kern, spec=spec, form=forms,
        grid=grid, converged=pot.converged, lipschitz=kernel_lipschitz(kern.values),
    )


@dataclass(frozen=True, eq=False)
class InvariantSetApprox:
    kind: SetKind
    section: int
    idx: np.ndarray
    velocities: np.ndarray
    gaps: tuple
    tol: float
    n: int
    rotation: tuple | None = None
    branches: dict = field(default_factory=dict)
    velocity_bound: float = math.inf
    notes: tuple = ()

    @property
    def points(self) -> np.ndarray:
        return self.idx / self.n

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.idx] = True
        return m

    @property
    def widest_gap(self):
        if not self.gaps:
            return None
        return max(self.gaps, key=lambda g: (g[1] - g[0], -g[0]))

    def covers_circle(self) -> bool:
        return self.idx.size == self.n


def gaps_of(mask: np.ndarray) -> tuple:
    """Maximal open arcs ``(a, b)`` (``b`` lifted so ``b > a``) between consecutive set points."""
    n = mask.size
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return ((0.0, 1.0),)
    out = []
    for k, a in enumerate(idx):
        b = idx[(k + 1) % idx.size]
        step = (b - a) % n or (n if idx.size == 1 else 0)
        if step > 1:
            out.append((a / n, (a + step) / n))
    return tuple(out)


def _succ_substep(bar: BarrierField, idx: np.ndarray):
    """Calibrated first-substep successor of each point: argmin_j S(i,j) + (R ⊗ h)(j, i)."""
    leaves = bar.kernel.leaves()
    first = leaves[0]
    a_sub = bar.alpha / len(leaves)
    h = bar.h
    if len(leaves) > 1:
        rest = compose_all(leaves[1:]).values + (bar.alpha - a_sub)
        back = mp.minplus_product_values(np.ascontiguousarray(rest), h)
    else:
        back = h
    s1 = first.values + a_sub
    tot = s1[idx, :] + back[:, idx].T
    j = np.argmin(tot, axis=1)
    m = first.winding[idx, j]
    n = bar.n
    vel = ((j - idx) / n + m) * len(leaves)
    best = tot[np.arange(idx.size), j]
    ties = np.sum(tot <= best[:, None] + 1e-12, axis=1)
    return j, vel, ties


def _period_successor(bar: BarrierField, idx: np.ndarray):
    crit = bar.critical
    tot = crit[idx, :] + bar.h[:, idx].T
    j = np.argmin(tot, axis=1)
    return j, bar.kernel.winding[idx, j]


def _recurrent(bar: BarrierField, idx: np.ndarray):
    """Recurrent nodes of the period successor map restricted to ``idx`` and their rotation ``(p, q)``."""
    succ, wind = _period_successor(bar, idx)
    n = bar.n
    nxt = dict(zip(idx.tolist(), zip(succ.tolist(), wind.tolist())))
    rec = set()
    rot = None
    for start in idx.tolist():
        seen = {}
        x = start
        steps = 0
        while x in nxt and x not in seen:
            seen[x] = steps
            x = nxt[x][0]
            steps += 1
        if x not in nxt or x in rec:
            continue
        cyc = [x]
        y = nxt[x][0]
        while y != x:
            cyc.append(y)
            y = nxt[y][0]
        rec.update(cyc)
        if rot is None:
            p = sum(nxt[z][1] + (nxt[z][0] - z) / n for z in cyc)
            fr = Fraction(int(round(p * n)), n * len(cyc)).limit_denominator(len(cyc))
            rot = (fr.numerator, fr.denominator)
    return np.array(sorted(rec), dtype=np.int64), rot


def velocity_bound(spec: LagrangianSpec, grid: GridSpec) -> float:
    """Documented Lipschitz bound for velocity sections: ``10 sqrt(max|V'|) + 2K``.

    The ``2K`` term admits a two-quantum jump between neighbouring cells, the
    resolution of velocities read off grid displacements.
    """
    return 10.0 * math.sqrt(spec.potential.max_abs_dx()) + 2.0 * grid.n_substeps


def aubry_set(barriers: BarrierField, tol: float | None = None) -> InvariantSetApprox:
    tol = barriers.aubry_tol if tol is None else float(tol)
    diag = np.diag(barriers.d)
    idx = np.flatnonzero(diag <= tol)
    if idx.size == 0:
        raise AubryInconsistency(f"empty Aubry set at tol={tol!r}; min d(x,x)={diag.min()!r}")
    _, vel, ties = _succ_substep(barriers, idx)
    _, rot = _recurrent(barriers, idx)
    notes = ()
    if np.any(ties > 1):
        notes = (f"{int(np.sum(ties > 1))} Aubry points with tied successors",)
    return InvariantSetApprox(
        SetKind.AUBRY, barriers.section, idx, vel, gaps_of(_mask(idx, barriers.n)), tol, barriers.n,
        rotation=rot, velocity_bound=velocity_bound(barriers.spec, barriers.grid), notes=notes,
    )


def _mask(idx, n):
    m = np.zeros(n, dtype=bool)
    m[idx] = True
    return m


def mather_set(barriers: BarrierField, aubry: InvariantSetApprox) -> InvariantSetApprox:
    """Recurrent Aubry points under the period successor (falls back to the whole Aubry set)."""
    rec, rot = _recurrent(barriers, aubry.idx)
    notes = ()
    if rec.size == 0:
        rec = aubry.idx
        notes = ("no recurrent successor cycle; Mather stand-in is the full Aubry set",)
    keep = np.isin(aubry.idx, rec)
    return InvariantSetApprox(
        SetKind.MATHER, barriers.section, aubry.idx[keep], aubry.velocities[keep],
        gaps_of(_mask(aubry.idx[keep], barriers.n)), aubry.tol, barriers.n, rotation=rot,
        velocity_bound=aubry.velocity_bound, notes=notes,
    )


def static_classes(barriers: BarrierField, aubry: InvariantSetApprox, tol: float | None = None) -> list:
    """Partition Aubry points by ``d(x, x') <= tol`` (transitive closure)."""
    tol = barriers.tol if tol is None else float(tol)
    idx = aubry.idx
    parent = list(range(idx.size))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    sub = barriers.d[np.ix_(idx, idx)]
    for a, b in zip(*np.nonzero(sub <= tol)):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict = {}
    for k in range(idx.size):
        groups.setdefault(find(k), []).append(idx[k] / barriers.n)
    return [sorted(g) for _, g in sorted(groups.items())]


# ---------------------------------------------------------------- lifted calibration


class LiftedFrame:
    """Winding-resolved substep blocks of a critical kernel viewed in a frame rotating by ``p/q``."""

    def __init__(self, barriers: BarrierField, q: int = 1, p: int = 0, window: int = 2):
        leaves = barriers.kernel.leaves()
        self.n = barriers.n
        self.k = len(leaves)
        self.q = int(q)
        self.p = int(p)
        self.window = int(window)
        a_sub = barriers.alpha / self.k
        self.steps = []
        for rep in range(self.q):
            for s, lf in enumerate(leaves):
                mvals, blocks = lf.blocks()
                shift = self.p if (rep == self.q - 1 and s == self.k - 1) else 0
                self.steps.append((np.ascontiguousarray(blocks + a_sub), mvals, shift))

    @property
    def nw(self) -> int:
        return 2 * self.window + 1

    def forward(self, src: int, max_blocks: int = 256, patience: int = 6):
        """``Φ̄((0, x_src) -> (w, x_j))`` for lifts ``w`` in the window, in the co-moving frame."""
        u = np.full((self.nw, self.n), np.inf)
        u[self.window, src] = 0.0
        best = np.full_like(u, np.inf)
        quiet = 0
        for _ in range(max_blocks):
            for blocks, mvals, shift in self.steps:
                u, _ = mp.lifted_step(u, blocks, mvals, shift)
            new = np.minimum(best, u)
            quiet = quiet + 1 if _settled(best, new) else 0
            best = new
            if quiet >= patience:
                break
        return best

    def forward_blocks(self, src: int, nblocks: int) -> list:
        """Exact ``n``-block values ``F̄^n((0, x_src) -> (w, x_j))`` for ``n = 1..nblocks``."""
        u = np.full((self.nw, self.n), np.inf)
        u[self.window, src] = 0.0
        out = []
        for _ in range(nblocks):
            for blocks, mvals, shift in self.steps:
                u, _ = mp.lifted_step(u, blocks, mvals, shift)
            out.append(u)
        return out

    def backward(self, dst: int, max_blocks: int = 256, patience: int = 6):
        """``Φ̄((w, x_i) -> (0, x_dst))`` plus the same value measured from one substep into a block."""
        v = np.full((self.nw, self.n), np.inf)
        v[self.window, dst] = 0.0
        best = np.full_like(v, np.inf)
        after_first = v.copy() if len(self.steps) == 1 else np.full_like(v, np.inf)
        quiet = 0
        for _ in range(max_blocks):
            for k in range(len(self.steps) - 1, -1, -1):
                blocks, mvals, shift = self.steps[k]
                v = mp.lifted_step_back(v, blocks, mvals, shift)
                if k == 1 or (len(self.steps) == 1):
                    after_first = np.minimum(after_first, v)
            new = np.minimum(best, v)
            quiet = quiet + 1 if _settled(best, new) else 0
            best = new
            if quiet >= patience:
                break
        return best, after_first

    def first_successor(self, after_first: np.ndarray, w: int, i: int):
        """Calibrated first substep from lift ``w`` of node ``i``: returns velocity."""
        blocks, mvals, shift = self.steps[0]
        best = np.inf
        vel = np.nan
        for b in range(mvals.size):
            w2 = w + mvals[b] - shift
            if w2 < 0 or w2 >= self.nw:
                continue
            tot = blocks[b, i, :] + after_first[w2]
            j = int(np.argmin(tot))
            if tot[j] < best:
                best = tot[j]
                vel = ((j - i) / self.n + mvals[b]) * self.k
        return vel


def _settled(old, new):
    fin = np.isfinite(new)
    if not np.array_equal(fin, np.isfinite(old)):
        return False
    return bool(np.all(old[fin] - new[fin] <= 1e-12))


def _clusters(idx: np.ndarray, n: int, diag: np.ndarray) -> list:
    """Representatives (least ``d(x,x)``) of circular runs of consecutive Aubry indices."""
    idx = np.sort(idx)
    if idx.size == n:
        return []
    runs = []
    cur = [idx[0]]
    for a in idx[1:]:
        if a == cur[-1] + 1:
            cur.append(a)
        else:
            runs.append(cur)
            cur = [a]
    runs.append(cur)
    if len(runs) > 1 and runs[0][0] == 0 and runs[-1][-1] == n - 1:
        runs[0] = runs.pop() + runs[0]
    return [int(r[int(np.argmin(diag[r]))]) for r in runs]


def lifted_calibration(barriers: BarrierField, aubry: InvariantSetApprox, q: int = 1, p: int = 0,
                       tol: float | None = None, window: int = 2):
    """Points calibrated between consecutive lifted Aubry representatives.

    Returns ``(plus_idx, plus_vel, minus_idx, minus_vel)``: ``+`` collects points
    on minimizing connections from a representative to the next one on its
    right, ``-`` those on connections running leftwards.
    """
    tol = barriers.tol if tol is None else float(tol)
    n = barriers.n
    reps = _clusters(aubry.idx, n, np.diag(barriers.d))
    frame = LiftedFrame(barriers, q, p, window)
    c0 = frame.window
    plus: dict = {}
    minus: dict = {}
    fwd = {r: frame.forward(r) for r in reps}
    bwd = {r: frame.backward(r) for r in reps}
    grid_pos = np.arange(n)
    for k, a in enumerate(reps):
        b = reps[(k + 1) % len(reps)]
        wb = 1 if b <= a else 0
        # lifted positions strictly between a (lift 0) and b (lift wb)
        if wb == 0:
            between = [(0, i) for i in range(a + 1, b)]
        else:
            between = [(0, i) for i in range(a + 1, n)] + [(1, i) for i in range(0, b)]
        # plus: a -> x -> b
        fa = fwd[a]
        bb, bb1 = bwd[b]
        total = fa[c0 + wb, b]
        for w, i in between:
            val = fa[c0 + w, i] + bb[c0 + w - wb, i] - total
            if val <= tol:
                plus[i] = frame.first_successor(bb1, c0 + w - wb, i)
        # minus: b -> x -> a  (b at lift wb, a at lift 0)
        fb = fwd[b]
        ba, ba1 = bwd[a]
        total = fb[c0 - wb, a]
        for w, i in between:
            val = fb[c0 + w - wb, i] + ba[c0 + w, i] - total
            if val <= tol:
                minus[i] = frame.first_successor(ba1, c0 + w, i)
    pi = np.array(sorted(plus), dtype=np.int64)
    mi = np.array(sorted(minus), dtype=np.int64)
    return pi, np.array([plus[i] for i in pi]), mi, np.array([minus[i] for i in mi])


def _assemble(kind, barriers, aubry, plus_idx, plus_vel, minus_idx, minus_vel, tol, rot, notes=()):
    n = barriers.n
    vel = np.full(n, np.nan)
    vel[aubry.idx] = aubry.velocities
    vel_minus = vel.copy()
    vel_minus[minus_idx] = minus_vel
    vel_plus = np.full(n, np.nan)
    vel_plus[aubry.idx] = aubry.velocities
    vel_plus[plus_idx] = plus_vel
    mask = _mask(aubry.idx, n)
    mask[plus_idx] = True
    mask[minus_idx] = True
    merged = np.where(np.isnan(vel_plus), vel_minus, vel_plus)
    idx = np.flatnonzero(mask)
    branches = {
        "+": (np.union1d(aubry.idx, plus_idx), vel_plus[np.union1d(aubry.idx, plus_idx)]),
        "-": (np.union1d(aubry.idx, minus_idx), vel_minus[np.union1d(aubry.idx, minus_idx)]),
    }
    return InvariantSetApprox(
        kind, barriers.section, idx, merged[idx], gaps_of(mask), tol, n, rotation=rot,
        branches=branches, velocity_bound=aubry.velocity_bound, notes=tuple(notes),
    )


def _full_set(kind, barriers, aubry, tol, rot, notes=()):
    return _assemble(kind, barriers, aubry, np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64),
                     np.zeros(0), tol, rot, notes)


def mane_set(barriers: BarrierField, aubry: InvariantSetApprox, tol: float | None = None) -> InvariantSetApprox:
    """Aubry points plus points calibrated on heteroclinic connections between Aubry points.

    With a fixed-point rotation (``q == 1``) the test runs on the lifted line;
    otherwise the circle test ``min_{y,y'} h(y,x) + h(x,y') - h(y,y') <= tol``
    over Aubry pairs is used.
    """
    tol = barriers.tol if tol is None else float(tol)
    rot = aubry.rotation
    if aubry.covers_circle():
        return _full_set(SetKind.MANE, barriers, aubry, tol, rot)
    if rot is not None and rot[1] == 1:
        pi, pv, mi, mv = lifted_calibration(barriers, aubry, 1, rot[0], tol)
        return _assemble(SetKind.MANE, barriers, aubry, pi, pv, mi, mv, tol, rot)
    defect = mp.calibration_defect(barriers.h, aubry.idx)
    extra = np.setdiff1d(np.flatnonzero(defect <= tol), aubry.idx)
    vel = np.full(extra.size, np.nan)
    return _assemble(SetKind.MANE, barriers, aubry, extra, vel, np.zeros(0, np.int64), np.zeros(0), tol, rot,
                     ("circle calibration test (no lifted frame)",))


def mane_branch(s: InvariantSetApprox, sign: str = "+") -> InvariantSetApprox:
    """The single-valued ``+`` (rightward) or ``-`` (leftward) branch of a Mañé or G set."""
    if sign not in s.branches:
        raise CircleKamError(f"set has no {sign!r} branch")
    idx, vel = s.branches[sign]
    ok = ~np.isnan(vel)
    idx, vel = idx[ok], vel[ok]
    return InvariantSetApprox(s.kind, s.section, idx, vel, gaps_of(_mask(idx, s.n)), s.tol, s.n,
                              rotation=s.rotation, velocity_bound=s.velocity_bound)


def rational_approx(rotation: float, n: int, q_max: int = K_MAX):
    """First continued-fraction convergent ``p/q`` with ``q <= q_max`` and error below ``1/n``."""
    x = Fraction(float(rotation)).limit_denominator(10**9)
    h0, h1, k0, k1 = 0, 1, 1, 0
    rem = x
    while True:
        a = math.floor(rem)
        h0, h1 = h1, a * h1 + h0
        k0, k1 = k1, a * k1 + k0
        if k1 > q_max:
            return None
        if abs(h1 / k1 - rotation) < 1.0 / n:
            return int(h1), int(k1)
        frac = rem - a
        if frac == 0:
            return None
        rem = 1 / frac


def g_set(spec: LagrangianSpec, form, grid: GridSpec, rotation: float, section: int = 0,
          barriers: BarrierField | None = None, tol: float | None = None, cache=None) -> InvariantSetApprox:
    """G set at a section: the Mañé set of the ``q``-fold rescaled problem for rotation ``≈ p/q``."""
    bar = compute_barriers(spec, form, grid, section, cache=cache) if barriers is None else barriers
    tol = bar.tol if tol is None else float(tol)
    aub = aubry_set(bar)
    pq = rational_approx(rotation, grid.n_space)
    cyc = aub.rotation
    if cyc is not None and cyc[1] <= K_MAX and abs(cyc[0] / cyc[1] - rotation) <= ROT_MATCH:
        # the recurrent grid cycle gives the rotation exactly
        pq = cyc
    if aub.covers_circle():
        return _full_set(SetKind.GSET, bar, aub, tol, pq)
    if pq is None:
        m = mane_set(bar, aub, tol)
        return InvariantSetApprox(SetKind.GSET, m.section, m.idx, m.velocities, m.gaps, tol, m.n, m.rotation,
                                  m.branches, m.velocity_bound, m.notes + ("irrational-like rotation",))
    p, q = pq
    pi, pv, mi, mv = lifted_calibration(bar, aub, q, p, tol)
    return _assemble(SetKind.GSET, bar, aub, pi, pv, mi, mv, tol, pq)


@dataclass(frozen=True)
class GraphReport:
    lipschitz_constant: float
    violations: int
    bound: float


def graph_check(s: InvariantSetApprox, bound: float | None = None, radius: int = 4) -> GraphReport:
    """Largest ``|v_i - v_j| / dist(x_i, x_j)`` over point pairs at most ``radius`` cells apart."""
    bound = s.velocity_bound if bound is None else float(bound)
    idx, vel = s.idx, np.asarray(s.velocities, dtype=float)
    ok = ~np.isnan(vel)
    idx, vel = idx[ok], vel[ok]
    if idx.size < 2:
        return GraphReport(0.0, 0, bound)
    order = np.argsort(idx)
    idx, vel = idx[order], vel[order]
    n = s.n
    lip = 0.0
    viol = 0
    pos = {int(i): k for k, i in enumerate(idx)}
    for k, i in enumerate(idx):
        for off in range(1, radius + 1):
            j = (int(i) + off) % n
            if j not in pos or j == i:
                continue
            r = abs(vel[k] - vel[pos[j]]) / (off / n)
            lip = max(lip, r)
            if r > bound:
                viol += 1
    return GraphReport(float(lip), int(viol), bound)


# ---------------------------------------------------------------- curve classification


def _lifted_phi(frame: LiftedFrame, src: int, cache: dict):
    if src not in cache:
        cache[src] = frame.forward(src)
    return cache[src]


def classify_curve(spec: LagrangianSpec, form, curve: DiscreteCurve, barriers: BarrierField,
                   tol: float | None = None) -> CurveClass:
    """Static / semi-static / minimizing test on every whole-period sub-window of ``curve``."""
    tol = barriers.tol if tol is None else float(tol)
    k = barriers.grid.n_substeps
    steps = curve.positions.size - 1
    if steps < k or steps % k:
        raise CircleKamError("classify_curve needs a curve made of whole periods (at least one)")
    from .model import block_action

    seg = block_action(spec, as_forms(form), curve.positions[:-1], curve.positions[1:], curve.times[:-1],
                       np.diff(curve.times))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    periods = steps // k
    n = barriers.n
    X = curve.positions[::k]
    nodes = np.round(X * n).astype(np.int64)
    node_c = nodes % n
    lifts = np.floor_divide(nodes, n)
    span = int(np.max(np.abs(lifts[:, None] - lifts[None, :]))) + 2
    frame = LiftedFrame(barriers, 1, 0, window=span)
    c0 = frame.window
    phis: dict = {}
    exact: dict = {}
    semi = static = minimizing = True
    for a in range(periods):
        for b in range(a + 1, periods + 1):
            act = cum[b * k] - cum[a * k] + barriers.alpha * (b - a)
            dw = int(lifts[b] - lifts[a])
            phi_ab = _lifted_phi(frame, int(node_c[a]), phis)[c0 + dw, node_c[b]]
            phi_ba = _lifted_phi(frame, int(node_c[b]), phis)[c0 - dw, node_c[a]]
            if act > phi_ab + tol:
                semi = False
            if abs(act + phi_ba) > tol:
                static = False
            src = int(node_c[a])
            if src not in exact:
                exact[src] = frame.forward_blocks(src, periods)
            if act > exact[src][b - a - 1][c0 + dw, node_c[b]] + tol:
                minimizing = False
    if semi and static:
        return CurveClass.STATIC
    if semi:
        return CurveClass.SEMI_STATIC
    if minimizing:
        return CurveClass.MINIMIZING_ONLY
    return CurveClass.NOT_MINIMIZING

"""Gap detection, step forms, class schedules and connecting orbits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .action import (
    DiscreteCurve,
    expand,
    minimize_endpoint,
    period_kernel,
    refine_curve,
)
from .aubry import aubry_set, compute_barriers, g_set, mather_set
from .errors import ConstructionError, ScheduleError
from .model import GridSpec, LagrangianSpec, OneForm, as_forms, block_derivatives, uniform_form
from . import _minplus as mp
from .weakkam import rotation_number

log = logging.getLogger(__name__)

GAP_CELLS = 3
PROBE_STEPS = (0.25, 0.5, 0.75, 1.0)


class RSpace(str, Enum):
    FULL = "Full"
    TRIVIAL = "Trivial"


@dataclass(frozen=True)
class GapReport:
    has_gap: bool
    gaps: dict
    widest: tuple | None
    rotation: float
    sets: dict = field(default_factory=dict, repr=False)


_GAP_MEMO: dict = {}


def _memo_key(spec, c, grid):
    return (spec.kind.value, spec.potential.terms, float(c), grid.n_space, grid.n_substeps, grid.winding_cap)


def gap_analysis(spec: LagrangianSpec, c: float, grid: GridSpec, horizon: int = 100, cache=None) -> GapReport:
    """G sets of class ``c`` at every time section; a gap is a missed arc wider than 3 cells."""
    key = _memo_key(spec, c, grid)
    if key in _GAP_MEMO:
        return _GAP_MEMO[key]
    form = uniform_form(c)
    rho = rotation_number(spec, form, grid, horizon, cache=cache)
    sections = [0] if spec.autonomous else list(range(grid.n_substeps))
    gaps, sets = {}, {}
    widest = None
    min_width = GAP_CELLS / grid.n_space
    for s in sections:
        gs = g_set(spec, form, grid, rho, section=s, cache=cache)
        sets[s] = gs
        wide = tuple(g for g in gs.gaps if g[1] - g[0] > min_width + 1e-12)
        gaps[s] = wide
        for g in wide:
            if widest is None or g[1] - g[0] > widest[1][1] - widest[1][0] + 1e-12:
                widest = (s, g)
    rep = GapReport(any(gaps.values()), gaps, widest, rho, sets)
    _GAP_MEMO[key] = rep
    return rep


def clear_memo() -> None:
    _GAP_MEMO.clear()
    _TRACK_MEMO.clear()


def r_space(spec: LagrangianSpec, c: float, grid: GridSpec, cache=None) -> RSpace:
    return RSpace.FULL if gap_analysis(spec, c, grid, cache=cache).has_gap else RSpace.TRIVIAL


@dataclass(frozen=True)
class EquivalenceReport:
    equivalent: bool
    failing_class: float | None
    samples: tuple = ()


def c_equivalence(spec: LagrangianSpec, c0: float, c1: float, grid: GridSpec, n_samples: int = 5,
                  cache=None) -> EquivalenceReport:
    """Classes joined by a segment on which every sample has ``R(c)`` Full."""
    if c0 == c1:
        return EquivalenceReport(True, None, ())
    lo, hi = sorted((float(c0), float(c1)))
    cs = np.linspace(lo, hi, max(int(n_samples), 2))
    for c in cs:
        if r_space(spec, float(c), grid, cache=cache) is RSpace.TRIVIAL:
            return EquivalenceReport(False, float(c), tuple(float(x) for x in cs))
    return EquivalenceReport(True, None, tuple(float(x) for x in cs))


def cosine_bump(arc, n: int) -> np.ndarray:
    """Unit-mass cosine taper centred in ``arc`` with half-width a quarter of the arc length."""
    a, b = float(arc[0]), float(arc[1])
    mid = 0.5 * (a + b)
    hw = 0.25 * (b - a)
    x = np.arange(n) / n
    r = (x - mid + 0.5) % 1.0 - 0.5
    g = np.where(np.abs(r) < hw, 0.5 * (1.0 + np.cos(np.pi * r / hw)), 0.0)
    if not np.any(g > 0):
        raise ConstructionError(f"gap arc {arc} too narrow for the grid")
    g = g / g.mean()
    return g


@dataclass(frozen=True, eq=False)
class StepForm:
    base_class: float
    delta_class: float
    density: np.ndarray | None
    ramp: tuple
    gap_arc: tuple | None
    section: int = 0

    @property
    def is_zero(self) -> bool:
        return self.delta_class == 0.0

    def profile(self, s):
        from .model import smoothstep

        t0, t1 = self.ramp
        return smoothstep((np.asarray(s, dtype=float) - t0) / (t1 - t0))

    def one_form(self, start: float):
        """The form ``f(t - start) δ g dx`` in absolute time, or ``None`` for a zero step."""
        if self.is_zero:
            return None
        return OneForm(self.delta_class, self.density, (start + self.ramp[0], start + self.ramp[1]))


def build_step_form(spec: LagrangianSpec, c: float, delta: float, grid: GridSpec, cache=None) -> StepForm:
    if delta == 0:
        return StepForm(float(c), 0.0, None, (0.0, 1.0), None)
    rep = gap_analysis(spec, c, grid, cache=cache)
    if not rep.has_gap:
        raise ConstructionError(f"no gap in the G set at c={c!r}: R(c) is trivial")
    section, arc = rep.widest
    return StepForm(float(c), float(delta), cosine_bump(arc, grid.n_space), (0.0, 1.0), tuple(arc), section)


def step_form_from_arc(c: float, delta: float, arc, n: int) -> StepForm:
    return StepForm(float(c), float(delta), cosine_bump(arc, n), (0.0, 1.0), tuple(arc), 0)


_TRACK_MEMO: dict = {}


def mather_track(spec: LagrangianSpec, c: float, grid: GridSpec, cache=None) -> list:
    """Grid nodes of the Mather stand-in at every substep section of a period."""
    key = _memo_key(spec, c, grid)
    if key in _TRACK_MEMO:
        return _TRACK_MEMO[key]
    bar = compute_barriers(spec, uniform_form(c), grid, cache=cache)
    aub = aubry_set(bar)
    mat = mather_set(bar, aub)
    k = grid.n_substeps
    crit = bar.critical
    tot = crit[mat.idx, :] + bar.h[:, mat.idx].T
    succ = np.argmin(tot, axis=1)
    track = [set() for _ in range(k)]
    for i, j in zip(mat.idx, succ):
        chain = expand(bar.kernel, int(i), int(j))
        track[0].add(int(i))
        for s, (_, _, b, _) in enumerate(chain[:-1]):
            track[s + 1].add(int(b))
    out = [np.array(sorted(t), dtype=np.int64) for t in track]
    _TRACK_MEMO[key] = out
    return out


def _circ_dist(x, nodes, n):
    if nodes.size == 0:
        return np.inf
    d = np.abs((np.asarray(x)[..., None] - nodes / n + 0.5) % 1.0 - 0.5)
    return d.min(axis=-1)


@dataclass(frozen=True)
class DwellEstimate:
    periods: int
    achieved: bool


def _chain_positions(kernels, path, n):
    """Grid nodes at every substep of the dp chain through ``path``."""
    nodes = [path[0]]
    for k, a, b in zip(kernels, path, path[1:]):
        for _, _, j, _ in expand(k, a, b):
            nodes.append(j)
    return np.array(nodes)


def dwell_estimate(spec: LagrangianSpec, c: float, grid: GridSpec, epsilon: float, t_cap: int = 64,
                   n_samples: int = 16, cache=None) -> DwellEstimate:
    """Least ``T <= t_cap`` such that sampled ``T``-period minimizers all pass within ``epsilon`` of the Mather set."""
    n = grid.n_space
    k = grid.n_substeps
    track = mather_track(spec, c, grid, cache=cache)
    kern = period_kernel(spec, uniform_form(c), grid, cache=cache)
    pts = np.unique(np.linspace(0, n, n_samples, endpoint=False).astype(np.int64))
    us = []
    preds = [[] for _ in pts]
    for a in pts:
        u = np.full(n, np.inf)
        u[a] = 0.0
        us.append(u)
    near = [np.asarray(_circ_dist(np.arange(n) / n, tr, n) <= epsilon + 1e-12) for tr in track]
    for T in range(1, t_cap + 1):
        ok = True
        for s, a in enumerate(pts):
            us[s], p = mp.vec_matrix(us[s], kern.values)
            preds[s].append(p)
        for s, a in enumerate(pts):
            if not ok:
                break
            for b in pts:
                path = [int(b)]
                for p in reversed(preds[s]):
                    path.append(int(p[path[-1]]))
                path.reverse()
                if any(near[0][x] for x in path):
                    continue
                nodes = _chain_positions([kern] * T, path, n)
                sec = np.arange(nodes.size) % k
                if not np.any([near[q][x] for q, x in zip(sec, nodes)]):
                    ok = False
                    break
        if ok:
            return DwellEstimate(T, True)
    log.warning("dwell estimate hit cap %d at c=%r eps=%r", t_cap, c, epsilon)
    return DwellEstimate(t_cap, False)


def delta_cap(spec: LagrangianSpec, c: float, grid: GridSpec, cache=None) -> float:
    """A quarter of the class range around ``c`` over which gaps persist (probed on a 0.25 lattice)."""
    width = 0.0
    for sign in (1.0, -1.0):
        for step in PROBE_STEPS:
            if not gap_analysis(spec, c + sign * step, grid, cache=cache).has_gap:
                break
            width += PROBE_STEPS[0]
    return 0.25 * width


@dataclass(frozen=True, eq=False)
class CohomologySchedule:
    spec: LagrangianSpec
    grid: GridSpec
    classes: tuple
    epsilons: tuple
    dwell_windows: tuple
    transitions: tuple
    kernel_sequence: tuple
    forms: tuple
    dwell_estimates: tuple
    requested: tuple = ()
    warnings: tuple = ()

    @property
    def horizon(self) -> int:
        return len(self.kernel_sequence)


def _split(classes, epsilons, caps):
    out_c, out_e = [float(classes[0])], [float(epsilons[0])]
    for i in range(len(classes) - 1):
        c0, c1 = float(classes[i]), float(classes[i + 1])
        d = c1 - c0
        cap = caps(c0)
        pieces = 1 if d == 0 or cap <= 0 else max(1, math.ceil(abs(d) / cap - 1e-12))
        eps_mid = min(float(epsilons[i]), float(epsilons[i + 1]))
        for k in range(1, pieces):
            out_c.append(c0 + d * k / pieces)
            out_e.append(eps_mid)
        out_c.append(c1)
        out_e.append(float(epsilons[i + 1]))
    return out_c, out_e


def build_schedule(spec: LagrangianSpec, classes, epsilons, grid: GridSpec, dwell_padding: int = 2,
                   t_cap: int = 64, auto_split: bool = True, cache=None) -> CohomologySchedule:
    """Staircase of dwell windows and one-period transitions through ``classes``.

    Jumps larger than the local δ cap are split into equal sub-steps whose
    tolerance is the smaller of the neighbouring epsilons.  During a dwell the
    active form is the starting class plus every step form switched on so far;
    it is cohomologous to the uniform form of the dwell's class, so dwell
    kernels are the stationary kernels of that form.
    """
    classes = [float(c) for c in classes]
    epsilons = [float(e) for e in epsilons]
    if not classes or len(classes) != len(epsilons):
        raise ScheduleError("classes and epsilons must be non-empty and of equal length")
    for i in range(len(classes) - 1):
        if classes[i + 1] != classes[i] and r_space(spec, classes[i], grid, cache=cache).value != "Full":
            raise ScheduleError(f"R-test fails at index {i}: class {classes[i]!r} has no gap",
                                index=i, failing_class=classes[i])
    if auto_split:
        cs, es = _split(classes, epsilons, lambda c: delta_cap(spec, c, grid, cache=cache))
    else:
        cs, es = classes, epsilons
    for i in range(len(cs) - 1):
        if cs[i + 1] != cs[i] and r_space(spec, cs[i], grid, cache=cache).value != "Full":
            raise ScheduleError(f"R-test fails at split index {i}: class {cs[i]!r} has no gap",
                                index=i, failing_class=cs[i])
    notes = []
    dwells = []
    for c, e in zip(cs, es):
        est = dwell_estimate(spec, c, grid, e, t_cap=t_cap, cache=cache)
        if not est.achieved:
            notes.append(f"dwell estimate capped at c={c!r}, eps={e!r}")
        dwells.append(est)
    forms = [uniform_form(cs[0])]
    windows, transitions = [], []
    t = 0
    for i, (c, est) in enumerate(zip(cs, dwells)):
        length = est.periods + dwell_padding
        windows.append((t, t + length))
        t += length
        if i + 1 < len(cs):
            sf = build_step_form(spec, c, cs[i + 1] - c, grid, cache=cache)
            transitions.append(sf)
            f = sf.one_form(float(t))
            if f is not None:
                forms.append(f)
            t += 1
    forms = tuple(forms)
    kernels = tuple(period_kernel(spec, forms, grid, t0=p, cache=cache) for p in range(t))
    return CohomologySchedule(spec, grid, tuple(cs), tuple(es), tuple(windows), tuple(transitions), kernels,
                              forms, tuple(dwells), tuple(classes), tuple(notes))


@dataclass(frozen=True, eq=False)
class ConnectingOrbitResult:
    curve: DiscreteCurve
    visit_times: tuple
    visit_distances: tuple
    verified: bool
    window_rotations: tuple
    dp_curve: DiscreteCurve | None = None


def connecting_orbit(schedule: CohomologySchedule, refine: bool = True, cache=None) -> ConnectingOrbitResult:
    """Free-endpoint minimizer of the scheduled action and its visits to each class's Mather set."""
    spec, grid = schedule.spec, schedule.grid
    dp = minimize_endpoint(list(schedule.kernel_sequence))
    curve = refine_curve(spec, schedule.forms, dp) if refine else dp
    n, k = grid.n_space, grid.n_substeps
    times, X = curve.times, curve.positions
    visits, dists, rots = [], [], []
    for (a, b), c in zip(schedule.dwell_windows, schedule.classes):
        track = mather_track(spec, c, grid, cache=cache)
        lo, hi = a * k, b * k
        ds = np.array([_circ_dist(X[s] % 1.0, track[s % k], n) for s in range(lo, hi + 1)])
        s_best = lo + int(np.argmin(ds))
        visits.append(float(times[s_best]))
        dists.append(float(ds.min()))
        rots.append(float((X[hi] - X[lo]) / (times[hi] - times[lo])))
    ok = all(d <= e + 1e-12 for d, e in zip(dists, schedule.epsilons))
    return ConnectingOrbitResult(curve, tuple(visits), tuple(dists), ok, tuple(rots), dp)


@dataclass(frozen=True)
class ExtremalReport:
    max_el_residual: float
    max_inside_support: float
    checked: int
    excluded: int


def verify_extremal(spec: LagrangianSpec, schedule: CohomologySchedule | None, curve: DiscreteCurve) -> ExtremalReport:
    """Discrete Euler–Lagrange residual of the unmodified Lagrangian at interior samples.

    Samples lying in the support of a step-form bump are excluded from the
    maximum and reported separately.
    """
    forms = () if schedule is None else schedule.forms
    bumps = [f for f in as_forms(forms) if not f.uniform]
    X, t = curve.positions, curve.times
    if X.size < 3:
        return ExtremalReport(0.0, 0.0, 0, 0)
    d1, d2, *_ = block_derivatives(spec, (), X[:-1], X[1:], t[:-1], np.diff(t), include_forms=False)
    res = np.abs(d2[:-1] + d1[1:])
    inside = np.zeros(res.size, dtype=bool)
    for f in bumps:
        inside |= f.density_at(X[1:-1]) > 0
    out = res[~inside]
    ins = res[inside]
    return ExtremalReport(float(out.max()) if out.size else 0.0, float(ins.max()) if ins.size else 0.0,
                          int(out.size), int(ins.size))

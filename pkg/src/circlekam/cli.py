"""Command-line experiment runner.

Exit status: 0 success, 1 error (bad config, failed precondition), 2 a connect
run whose orbit failed verification, 3 finished with convergence warnings.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from . import action, connect
from .aubry import aubry_set, compute_barriers, g_set, mane_set
from .cache import KernelCache, cache_gc
from .config import ConfigError, ExperimentConfig, Task, load_config
from .errors import CircleKamError
from .model import uniform_form
from .weakkam import alpha_function, regularity_test, rotation_number

log = logging.getLogger("circlekam")

EXIT_OK, EXIT_ERROR, EXIT_UNVERIFIED, EXIT_WARN = 0, 1, 2, 3


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x) + 0.0, ".17g")


def cname(c: float) -> str:
    return repr(float(c))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Run:
    def __init__(self, cfg: ExperimentConfig, out: Path, cache: KernelCache | None):
        self.cfg = cfg
        self.out = out
        self.cache = cache
        self.spec = cfg.lagrangian()
        self.grid = cfg.grid_spec()
        self.timings: dict = {}
        self.warnings: list = []
        self.files: list = []

    def stage(self, name):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *a):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - self.t

        return _T()

    def csv(self, name, header, rows):
        _write_csv(self.out / name, header, rows)
        self.files.append(name)

    def json(self, name, data):
        _write_json(self.out / name, data)
        self.files.append(name)

    # -- tasks

    def alpha(self):
        p = self.cfg.params
        cs = self.cfg.c_values()
        with self.stage("alpha"):
            table = alpha_function(self.spec, cs, self.grid, workers=self.cfg.workers, cache=self.cache)
        self.warnings.extend(table.warnings)
        rows = []
        with self.stage("rotation+regularity"):
            for c, a, ap in table.samples:
                rho = rotation_number(self.spec, uniform_form(c), self.grid, p.horizon, cache=self.cache)
                reg = regularity_test(self.spec, uniform_form(c), self.grid, p.max_n, cache=self.cache)
                rows.append((c, a, ap, rho, reg.regular, reg.period_detected))
        self.csv("alpha.csv", ["c", "alpha", "alpha_prime", "rotation", "regular", "period_detected"], rows)
        self.json("summary.json", {
            "task": "alpha",
            "convex": table.midpoint_convex(),
            "beta": [[fmt(w), fmt(b)] for w, b in table.beta_samples],
        })

    def _barriers(self, c, section):
        with self.stage("barriers"):
            bar = compute_barriers(self.spec, uniform_form(c), self.grid, section,
                                   n_max=self.cfg.params.phi_n_max, cache=self.cache)
        if not bar.converged:
            self.warnings.append(f"Mañé potential not converged at c={c!r}")
        return bar

    def _sections(self):
        s = self.cfg.params.section
        if s is not None:
            return [s % self.grid.n_substeps]
        return [0]

    def barrier(self):
        summary = []
        for c in self.cfg.params.classes:
            for s in self._sections():
                bar = self._barriers(c, s)
                x = self.grid.x
                n = self.grid.n_space
                ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
                rows = zip(x[ii.ravel()], x[jj.ravel()], bar.phi.ravel(), bar.h.ravel(), bar.d.ravel(),
                           bar.d_tilde.ravel())
                name = f"barrier_{cname(c)}.csv" if s == 0 else f"barrier_{cname(c)}_s{s}.csv"
                self.csv(name, ["x", "y", "phi", "h", "d", "d_tilde"], rows)
                summary.append({"class": fmt(c), "section": s, "alpha": fmt(bar.alpha), "n_used": bar.n_used,
                                "n_max": self.cfg.params.phi_n_max, "converged": bar.converged})
        self.json("summary.json", {"task": "barrier", "fields": summary})

    def sets(self):
        p = self.cfg.params
        summary = []
        for c in p.classes:
            rho = rotation_number(self.spec, uniform_form(c), self.grid, p.horizon, cache=self.cache)
            for s in self._sections():
                bar = self._barriers(c, s)
                with self.stage("sets"):
                    aub = aubry_set(bar, p.tol)
                    man = mane_set(bar, aub, p.tol)
                    gs = g_set(self.spec, uniform_form(c), self.grid, rho, s, barriers=bar, tol=p.tol)
                vel = np.full(self.grid.n_space, np.nan)
                vel[man.idx] = man.velocities
                vel[aub.idx] = aub.velocities
                am, mm, gm = aub.mask, man.mask, gs.mask
                diag = np.diag(bar.d)
                rows = [(x, diag[i], am[i], mm[i], gm[i], vel[i]) for i, x in enumerate(self.grid.x)]
                name = f"sets_{cname(c)}.csv" if s == 0 else f"sets_{cname(c)}_s{s}.csv"
                self.csv(name, ["x", "d_xx", "in_aubry", "in_mane", "in_g", "velocity"], rows)
                summary.append({
                    "class": fmt(c), "section": s, "rotation": fmt(rho),
                    "aubry_points": int(aub.idx.size), "mane_points": int(man.idx.size),
                    "g_points": int(gs.idx.size), "g_gaps": [[fmt(a), fmt(b)] for a, b in gs.gaps],
                    "rotation_pq": list(gs.rotation) if gs.rotation else None, "notes": list(gs.notes),
                })
        self.json("summary.json", {"task": "sets", "sets": summary})

    def regularity(self):
        p = self.cfg.params
        rows, summary = [], []
        for c in p.classes:
            with self.stage("regularity"):
                rep = regularity_test(self.spec, uniform_form(c), self.grid, p.max_n, sections=True,
                                      cache=self.cache)
            rows.append((c, rep.regular, rep.oscillation, rep.period_detected))
            summary.append({"class": fmt(c), "regular": rep.regular, "oscillation": fmt(rep.oscillation),
                            "period_detected": rep.period_detected,
                            "per_section": [[s, r, fmt(o), k] for s, r, o, k in rep.per_section]})
        self.csv("regularity.csv", ["c", "regular", "oscillation", "period_detected"], rows)
        self.json("summary.json", {"task": "regularity", "classes": summary})

    def connect(self) -> int:
        p = self.cfg.params
        cls = [e.cls for e in p.schedule]
        eps = [e.epsilon for e in p.schedule]
        with self.stage("equivalence"):
            for a, b in zip(cls, cls[1:]):
                rep = connect.c_equivalence(self.spec, a, b, self.grid, p.n_samples, cache=self.cache)
                if not rep.equivalent:
                    raise CircleKamError(
                        f"classes {a!r} and {b!r} are not C-equivalent: R({rep.failing_class!r}) is trivial"
                    )
        with self.stage("schedule"):
            sch = connect.build_schedule(self.spec, cls, eps, self.grid, p.dwell_padding, p.t_cap,
                                         cache=self.cache)
        self.warnings.extend(sch.warnings)
        with self.stage("orbit"):
            res = connect.connecting_orbit(sch, refine=p.refine, cache=self.cache)
            ext = connect.verify_extremal(self.spec, sch, res.curve)
        k = self.grid.n_substeps
        n = self.grid.n_space
        v = res.curve.velocities()
        win = np.full(res.curve.times.size, -1, dtype=np.int64)
        dist = np.full(res.curve.times.size, np.nan)
        for w, ((a, b), c) in enumerate(zip(sch.dwell_windows, sch.classes)):
            track = connect.mather_track(self.spec, c, self.grid, cache=self.cache)
            for s in range(a * k, b * k + 1):
                win[s] = w
                dist[s] = connect._circ_dist(res.curve.positions[s] % 1.0, track[s % k], n)
        rows = zip(res.curve.times, res.curve.positions, v, win, dist)
        self.csv("orbit.csv", ["t", "x", "v_fd", "window_index", "dist_to_target"], rows)
        self.json("summary.json", {
            "task": "connect",
            "verified": res.verified,
            "classes": [fmt(c) for c in sch.classes],
            "epsilons": [fmt(e) for e in sch.epsilons],
            "dwell_windows": [list(w) for w in sch.dwell_windows],
            "visit_times": [fmt(t) for t in res.visit_times],
            "distances": [fmt(d) for d in res.visit_distances],
            "window_rotations": [fmt(r) for r in res.window_rotations],
            "residuals": {"max_el_residual": fmt(ext.max_el_residual),
                          "max_inside_support": fmt(ext.max_inside_support),
                          "checked": ext.checked, "excluded": ext.excluded},
            "action": fmt(res.curve.action),
            "transition_periods": 1,
        })
        return EXIT_OK if res.verified else EXIT_UNVERIFIED

    def execute(self) -> int:
        task = self.cfg.task
        status = getattr(self, task.value)()
        return EXIT_OK if status is None else status


def run(cfg: ExperimentConfig, out_dir=None, cache_dir=None) -> int:
    """Run one experiment; writes task outputs and ``manifest.json`` into the output directory."""
    out = Path(out_dir or cfg.output_dir or "circlekam-out")
    out.mkdir(parents=True, exist_ok=True)
    cache_root = cache_dir or cfg.cache_dir
    cache = KernelCache(cache_root) if cache_root else None
    action.clear_memo()
    connect.clear_memo()
    r = Run(cfg, out, cache)
    status = EXIT_OK
    error = None
    t0 = time.perf_counter()
    with (cache if cache is not None else nullcontext()):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                status = r.execute()
            except (CircleKamError, ValueError) as e:
                error = str(e)
                status = EXIT_ERROR
        r.warnings.extend(str(w.message) for w in caught)
    r.timings["total"] = time.perf_counter() - t0
    if status == EXIT_OK and r.warnings:
        status = EXIT_WARN
    manifest = {
        "config_hash": cfg.digest(),
        "version": __version__,
        "task": cfg.task.value,
        "timings": {k: round(v, 6) for k, v in sorted(r.timings.items())},
        "cache": {"hits": cache.hits if cache else 0, "misses": cache.misses if cache else 0},
        "warnings": r.warnings,
        "error": error,
        "exit_status": status,
        "files": r.files,
    }
    _write_json(out / "manifest.json", manifest)
    if error:
        print(f"error: {error}", file=sys.stderr)
    return status


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="circlekam", description="Weak KAM / Aubry–Mather experiments on the circle.")
    sub = ap.add_subparsers(dest="command", required=True)
    for t in Task:
        sp = sub.add_parser(t.value, help=f"run the {t.value} task")
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--cache", help="kernel cache directory")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--seed", type=int, help="reserved; every algorithm is deterministic")
    gc = sub.add_parser("cache-gc", help="evict least recently used cache entries")
    gc.add_argument("--cache", required=True)
    gc.add_argument("--max-bytes", type=int, required=True)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "cache-gc":
        try:
            freed = cache_gc(args.cache, args.max_bytes)
        except (CircleKamError, FileNotFoundError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_ERROR
        print(freed)
        return EXIT_OK
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = load_config(text)
    except (OSError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    task = Task(args.command)
    if cfg.task is not None and cfg.task is not task:
        print(f"error: config task {cfg.task.value!r} does not match subcommand {task.value!r}", file=sys.stderr)
        return EXIT_ERROR
    updates = {"task": task}
    if args.workers:
        updates["workers"] = args.workers
    cfg = cfg.model_copy(update=updates)
    if task is Task.CONNECT and not cfg.params.schedule:
        print("error: params.schedule: connect task needs a schedule", file=sys.stderr)
        return EXIT_ERROR
    return run(cfg, args.out, args.cache)


if __name__ == "__main__":
    sys.exit(main())

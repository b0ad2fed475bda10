"""Experiment spec files, canonical emission, and run orchestration.

Specs are strict JSON: unknown keys anywhere are rejected with the offending
path, indices are range-checked, and emit(parse(text)) is canonical (sorted
keys, fixed indentation), so re-emitting a canonical spec reproduces it byte
for byte.  Runs write delimited text tables plus a manifest; every data file
is a pure function of (spec, seed), while the manifest carries wall time and
versions and is the one file allowed to differ between reruns.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import engine, experiments
from .dynamics import DEFAULT_CAP, PovState
from .experiments import Mu0Sampler, recurrence_experiment, schmidt_estimator
from .geometry import Vec2
from .tube import (
    Bounds,
    CellConfig,
    CellTemplate,
    ConfigurationProcess,
    ConvexPolygon,
    Disc,
    TubeRealization,
    Wall,
)
from .validators import check_assumptions

KINDS = ("validate", "orbit", "recurrence", "schmidt")


class SpecError(ValueError):
    """Malformed spec; the message names the offending field."""


@dataclass(frozen=True)
class Budgets:
    orbits: int = 100
    horizon: int = 1000
    samples: int = 1000
    attempts: int = 1000
    cap: int = DEFAULT_CAP


@dataclass(frozen=True)
class ExperimentSpec:
    template: CellTemplate
    process: ConfigurationProcess
    master_seed: int
    kind: str
    budgets: Budgets
    rhos: tuple
    bounds: Bounds
    out: Optional[str] = None

    def realization(self, seed: Optional[int] = None) -> TubeRealization:
        return TubeRealization(self.template, self.process,
                               self.master_seed if seed is None else seed)


# ---------------------------------------------------------------------------
# Parsing.
# ---------------------------------------------------------------------------

def _want(obj, path, allowed, required=()):
    if not isinstance(obj, dict):
        raise SpecError(f"{path}: expected an object")
    for k in obj:
        if k not in allowed:
            raise SpecError(f"{path}.{k}: unknown field")
    for k in required:
        if k not in obj:
            raise SpecError(f"{path}.{k}: missing required field")


def _num(value, path):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SpecError(f"{path}: expected a number")
    return float(value)


def _int(value, path, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise SpecError(f"{path}: expected an integer")
    if minimum is not None and value < minimum:
        raise SpecError(f"{path}: must be >= {minimum}")
    return value


def _point(value, path) -> Vec2:
    if not (isinstance(value, list) and len(value) == 2):
        raise SpecError(f"{path}: expected [x, y]")
    return Vec2(_num(value[0], path + "[0]"), _num(value[1], path + "[1]"))


def _sides(value, path, n_sides) -> tuple:
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value]
    if not (isinstance(value, list) and value):
        raise SpecError(f"{path}: expected a side index or list of side indices")
    out = []
    for i, v in enumerate(value):
        idx = _int(v, f"{path}[{i}]")
        if not (0 <= idx < n_sides):
            raise SpecError(f"{path}[{i}]: side index {idx} out of range 0..{n_sides - 1}")
        out.append(idx)
    return tuple(out)


def _parse_template(obj) -> CellTemplate:
    _want(obj, "template", {"vertices", "gate1", "gate2"}, ("vertices", "gate1", "gate2"))
    verts = obj["vertices"]
    if not (isinstance(verts, list) and len(verts) >= 3):
        raise SpecError("template.vertices: expected at least 3 points")
    vertices = tuple(_point(p, f"template.vertices[{i}]") for i, p in enumerate(verts))
    n = len(vertices)
    try:
        return CellTemplate(vertices,
                            _sides(obj["gate1"], "template.gate1", n),
                            _sides(obj["gate2"], "template.gate2", n))
    except ValueError as err:
        raise SpecError(f"template: {err}") from err


def _parse_config(obj, path) -> CellConfig:
    _want(obj, path, {"name", "discs", "walls", "polygons"})
    name = obj.get("name", "")
    if not isinstance(name, str):
        raise SpecError(f"{path}.name: expected a string")
    scatterers = []
    for i, row in enumerate(obj.get("discs", [])):
        p = f"{path}.discs[{i}]"
        if not (isinstance(row, list) and len(row) == 3):
            raise SpecError(f"{p}: expected [cx, cy, r]")
        scatterers.append(Disc(Vec2(_num(row[0], p), _num(row[1], p)), _num(row[2], p)))
    for i, row in enumerate(obj.get("walls", [])):
        p = f"{path}.walls[{i}]"
        if not (isinstance(row, list) and len(row) == 4):
            raise SpecError(f"{p}: expected [ax, ay, bx, by]")
        scatterers.append(Wall(Vec2(_num(row[0], p), _num(row[1], p)),
                               Vec2(_num(row[2], p), _num(row[3], p))))
    for i, poly in enumerate(obj.get("polygons", [])):
        p = f"{path}.polygons[{i}]"
        if not (isinstance(poly, list) and len(poly) >= 3):
            raise SpecError(f"{p}: expected a list of at least 3 points")
        scatterers.append(ConvexPolygon(tuple(_point(pt, f"{p}[{j}]")
                                              for j, pt in enumerate(poly))))
    return CellConfig(tuple(scatterers), name)


def _parse_process(obj, library) -> ConfigurationProcess:
    _want(obj, "process", {"variant", "probs", "transition", "stationary", "jitter"},
          ("variant",))
    variant = obj["variant"]
    if variant not in ("iid", "markov"):
        raise SpecError(f"process.variant: expected 'iid' or 'markov', got {variant!r}")
    jitter = (0.0, 0.0)
    if "jitter" in obj:
        row = obj["jitter"]
        if not (isinstance(row, list) and len(row) == 2):
            raise SpecError("process.jitter: expected [jx, jy]")
        jitter = (_num(row[0], "process.jitter"), _num(row[1], "process.jitter"))
    try:
        if variant == "iid":
            if "transition" in obj or "stationary" in obj:
                raise SpecError("process: transition/stationary only apply to markov")
            probs = obj.get("probs")
            if probs is not None:
                probs = tuple(_num(p, f"process.probs[{i}]") for i, p in enumerate(probs))
            return ConfigurationProcess(library, "iid", probs=probs, jitter=jitter)
        if "probs" in obj:
            raise SpecError("process: probs only applies to iid")
        P = obj.get("transition")
        if P is None:
            raise SpecError("process.transition: missing required field")
        P = tuple(tuple(_num(x, f"process.transition[{i}][{j}]")
                        for j, x in enumerate(row)) for i, row in enumerate(P))
        pi = obj.get("stationary")
        if pi is not None:
            pi = tuple(_num(x, f"process.stationary[{i}]") for i, x in enumerate(pi))
        return ConfigurationProcess(library, "markov", transition=P, stationary=pi,
                                    jitter=jitter)
    except SpecError:
        raise
    except ValueError as err:
        raise SpecError(f"process: {err}") from err


def parse_spec(text: str) -> ExperimentSpec:
    try:
        root = json.loads(text)
    except json.JSONDecodeError as err:
        raise SpecError(f"not valid JSON: {err}") from err
    _want(root, "spec", {"template", "library", "process", "seed", "bounds",
                         "experiment"},
          ("template", "library", "process", "seed", "experiment"))
    tpl = _parse_template(root["template"])
    lib_obj = root["library"]
    if not (isinstance(lib_obj, list) and lib_obj):
        raise SpecError("library: expected a nonempty list of configurations")
    library = tuple(_parse_config(cfg, f"library[{i}]") for i, cfg in enumerate(lib_obj))
    process = _parse_process(root["process"], library)
    seed = _int(root["seed"], "seed", minimum=0)

    b = root.get("bounds", {})
    _want(b, "bounds", {"k_m", "k_M", "K", "N", "gamma_m", "gamma_M", "M"})
    defaults = Bounds()
    bounds = Bounds(
        k_m=_num(b["k_m"], "bounds.k_m") if "k_m" in b else defaults.k_m,
        k_M=_num(b["k_M"], "bounds.k_M") if "k_M" in b else defaults.k_M,
        K=_int(b["K"], "bounds.K", 1) if "K" in b else defaults.K,
        N=_int(b["N"], "bounds.N", 0) if "N" in b else defaults.N,
        gamma_m=_num(b["gamma_m"], "bounds.gamma_m") if "gamma_m" in b else defaults.gamma_m,
        gamma_M=_num(b["gamma_M"], "bounds.gamma_M") if "gamma_M" in b else defaults.gamma_M,
        M=_int(b["M"], "bounds.M", 1) if "M" in b else defaults.M,
    )

    e = root["experiment"]
    _want(e, "experiment", {"kind", "orbits", "horizon", "samples", "attempts",
                            "cap", "rhos", "out"}, ("kind",))
    kind = e["kind"]
    if kind not in KINDS:
        raise SpecError(f"experiment.kind: expected one of {KINDS}, got {kind!r}")
    dflt = Budgets()
    budgets = Budgets(
        orbits=_int(e["orbits"], "experiment.orbits", 1) if "orbits" in e else dflt.orbits,
        horizon=_int(e["horizon"], "experiment.horizon", 1) if "horizon" in e else dflt.horizon,
        samples=_int(e["samples"], "experiment.samples", 1) if "samples" in e else dflt.samples,
        attempts=_int(e["attempts"], "experiment.attempts", 1) if "attempts" in e else dflt.attempts,
        cap=_int(e["cap"], "experiment.cap", 1) if "cap" in e else dflt.cap,
    )
    rhos = experiments.DEFAULT_RHOS
    if "rhos" in e:
        rhos = tuple(_num(r, f"experiment.rhos[{i}]") for i, r in enumerate(e["rhos"]))
        if any(r <= 0 for r in rhos):
            raise SpecError("experiment.rhos: radii must be positive")
    out = e.get("out")
    if out is not None and not isinstance(out, str):
        raise SpecError("experiment.out: expected a string path")
    return ExperimentSpec(tpl, process, seed, kind, budgets, rhos, bounds, out)


# ---------------------------------------------------------------------------
# Canonical emission.
# ---------------------------------------------------------------------------

def _config_obj(cfg: CellConfig) -> dict:
    obj = {}
    if cfg.name:
        obj["name"] = cfg.name
    discs = [[d.center.x, d.center.y, d.radius] for d in cfg.discs()]
    walls = [[w.a.x, w.a.y, w.b.x, w.b.y] for w in cfg.walls()]
    polys = [[[p.x, p.y] for p in poly.vertices] for poly in cfg.polygons()]
    if discs:
        obj["discs"] = discs
    if walls:
        obj["walls"] = walls
    if polys:
        obj["polygons"] = polys
    return obj


def emit_spec(spec: ExperimentSpec) -> str:
    proc = {"variant": spec.process.variant}
    if spec.process.variant == "iid":
        proc["probs"] = list(spec.process.probs)
    else:
        proc["transition"] = [list(r) for r in spec.process.transition]
        proc["stationary"] = [x for x in spec.process.stationary]
    if spec.process.jitter != (0.0, 0.0):
        proc["jitter"] = list(spec.process.jitter)
    exp = {
        "kind": spec.kind,
        "orbits": spec.budgets.orbits,
        "horizon": spec.budgets.horizon,
        "samples": spec.budgets.samples,
        "attempts": spec.budgets.attempts,
        "cap": spec.budgets.cap,
        "rhos": list(spec.rhos),
    }
    if spec.out is not None:
        exp["out"] = spec.out
    root = {
        "template": {
            "vertices": [[v.x, v.y] for v in spec.template.vertices],
            "gate1": list(spec.template.gate1_sides),
            "gate2": list(spec.template.gate2_sides),
        },
        "library": [_config_obj(c) for c in spec.process.library],
        "process": proc,
        "seed": spec.master_seed,
        "bounds": {
            "k_m": spec.bounds.k_m, "k_M": spec.bounds.k_M, "K": spec.bounds.K,
            "N": spec.bounds.N, "gamma_m": spec.bounds.gamma_m,
            "gamma_M": spec.bounds.gamma_M, "M": spec.bounds.M,
        },
        "experiment": exp,
    }
    return json.dumps(root, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Result writers.
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(float(x))
    return str(x)


def _write_table(path: Path, header, rows):
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def emit_plot_data(stats, out_dir: Path):
    """One file per curve: Birkhoff averages, mass-near-zero fractions and
    the first-return histogram."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_table(out_dir / "birkhoff.tsv",
                 ("n", "mean_abs_s_over_n"),
                 [(n, b) for n, b in zip(stats.n_grid, stats.birkhoff)])
    _write_table(out_dir / "qn.tsv",
                 ("n", "rho", "q_n"),
                 [(n, rho, q) for n, rho, q in stats.qn])
    _write_table(out_dir / "return_hist.tsv",
                 ("bin_lo", "bin_hi", "count"),
                 [(stats.hist_edges[i], stats.hist_edges[i + 1], c)
                  for i, c in enumerate(stats.hist_counts)])


def _write_orbit_summary(stats, out_dir: Path):
    header = ["orbit", "status", "first_return"]
    header += [f"s_at_{n}" for n in stats.n_grid]
    rows = []
    for o in range(stats.orbits):
        row = [o, engine.STATUS_NAMES[stats.statuses[o]], int(stats.first_returns[o])]
        for gi in range(len(stats.n_grid)):
            row.append(int(stats.s_grid[o, gi]) if stats.grid_set[o, gi] else "")
        rows.append(row)
    _write_table(out_dir / "orbit_summary.tsv", header, rows)


def _write_summary(stats, out_dir: Path):
    rows = [
        ("orbits", stats.orbits),
        ("horizon", stats.horizon),
        ("returned", stats.returned),
        ("singular", stats.singular),
        ("return_fraction", stats.return_fraction),
        ("kappa_hat", stats.kappa_hat),
        ("rhos", ",".join(repr(r) for r in stats.rhos)),
        ("n_grid", ",".join(str(n) for n in stats.n_grid)),
        ("total_collisions", stats.total_collisions),
        ("max_flat_run", stats.max_flat_run),
        ("v_norm_err", stats.v_norm_err),
    ]
    _write_table(out_dir / "summary.tsv", ("key", "value"), rows)


def _write_manifest(out_dir: Path, spec: ExperimentSpec, seed: int, workers: int,
                    wall_time: float):
    import numba

    from . import __version__
    manifest = {
        "kind": spec.kind,
        "seed": seed,
        "workers": workers,
        "wall_time_s": wall_time,
        "lorentztube": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "numba": numba.__version__,
        "spec": json.loads(emit_spec(replace(spec, master_seed=seed))),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _report_rows(report):
    rows = [
        ("a1", "variant", report.a1.variant),
        ("a1", "irreducible", report.a1.irreducible),
        ("a1", "stationary_residual", report.a1.stationary_residual),
        ("a2", "max_pieces_seen", report.a2.max_pieces_seen),
        ("a2", "bound_K", report.a2.bound_K),
        ("a2", "violations", report.a2.violations),
        ("a3", "applicable", report.a3.applicable),
        ("a3", "samples", report.a3.samples),
        ("a3", "gamma_min_sampled", report.a3.gamma_min),
        ("a3", "gamma_max_sampled", report.a3.gamma_max),
        ("a3", "max_flat_run", report.a3.max_flat_run),
        ("a3", "gamma_violations", report.a3.gamma_violations),
        ("a3", "flat_violations", report.a3.flat_violations),
        ("a3", "singular_samples", report.a3.singular),
        ("a3", "censored_samples", report.a3.censored),
        ("a4", "k_min_seen", report.a4.k_min_seen),
        ("a4", "bound_k_m", report.a4.bound_k_m),
        ("a4", "violations", report.a4.violations),
    ]
    for label in sorted(report.a5):
        rep = report.a5[label]
        rows.append(("a5", f"config_{label}_attempts", rep.attempts))
        for pair, (x, y) in sorted(rep.witnesses.items()):
            (gi, si), (go, so) = pair
            rows.append(("a5", f"config_{label}_witness_{gi}.{si}_to_{go}.{so}",
                         f"q=({_fmt(x.q.x)},{_fmt(x.q.y)}) v=({_fmt(x.v.x)},{_fmt(x.v.y)})"))
        for pair in rep.missing:
            (gi, si), (go, so) = pair
            rows.append(("a5", f"config_{label}_missing", f"{gi}.{si}_to_{go}.{so}"))
    for label in sorted(report.config_violations):
        for v in report.config_violations[label]:
            rows.append(("config", f"{label}_{v.constraint}", v.detail))
    rows.append(("verdict", "fatal", report.fatal()))
    return rows


def _run_orbit(spec: ExperimentSpec, realization, out_dir: Path):
    from .dynamics import pov_step

    sampler = Mu0Sampler(realization.template, realization.master_seed)
    state = PovState(sampler.sample_one(0), realization)
    rows = []
    s = 0
    t = 0.0
    status = "ok"
    first_return = -1
    for k in range(1, spec.budgets.horizon + 1):
        state2, res = pov_step(state, spec.budgets.cap)
        if res.status != "ok":
            status = res.status
            break
        s += res.e
        t += res.flight_time
        x = state2.x
        rows.append((k, res.e, s, x.gate, x.q.x, x.q.y, x.v.x, x.v.y, t))
        if s == 0 and first_return < 0:
            first_return = k
        state = state2
    _write_table(out_dir / "orbit.tsv",
                 ("k", "e", "s", "gate", "qx", "qy", "vx", "vy", "t"), rows)
    _write_table(out_dir / "orbit_summary.tsv", ("key", "value"),
                 [("status", status),
                  ("crossings", len(rows)),
                  ("first_return", first_return)])
    return 0


def run(spec: ExperimentSpec, out_dir, seed: Optional[int] = None,
        workers: int = 1) -> int:
    """Execute a parsed spec; returns the process exit status.

    Data files are deterministic given (spec, seed); the manifest records
    wall time and versions and is excluded from that guarantee.
    """
    t0 = time.perf_counter()
    eff_seed = spec.master_seed if seed is None else int(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    realization = spec.realization(eff_seed)
    status = 0
    if spec.kind == "validate":
        report = check_assumptions(
            realization, samples=spec.budgets.samples,
            attempts=spec.budgets.attempts, declared=spec.bounds,
            cap=spec.budgets.cap)
        _write_table(out_dir / "report.tsv", ("section", "field", "value"),
                     _report_rows(report))
        status = 1 if report.fatal() else 0
    elif spec.kind == "orbit":
        status = _run_orbit(spec, realization, out_dir)
    elif spec.kind in ("recurrence", "schmidt"):
        stats = recurrence_experiment(
            realization, spec.budgets.orbits, spec.budgets.horizon,
            cap=spec.budgets.cap, rhos=spec.rhos, workers=workers)
        if spec.kind == "recurrence":
            _write_orbit_summary(stats, out_dir)
            _write_summary(stats, out_dir)
            emit_plot_data(stats, out_dir)
        else:
            rows, kappa = schmidt_estimator(stats)
            _write_table(out_dir / "qn.tsv", ("n", "rho", "q_n"),
                         [(n, rho, q) for n, rho, q in rows])
            _write_table(out_dir / "summary.tsv", ("key", "value"),
                         [("kappa_hat", kappa), ("orbits", stats.orbits),
                          ("horizon", stats.horizon), ("singular", stats.singular)])
    _write_manifest(out_dir, spec, eff_seed, workers, time.perf_counter() - t0)
    return status


def replay_plot_data(run_dir, out_dir) -> int:
    """Rebuild the curve files of a finished recurrence run from its
    orbit_summary.tsv and summary.tsv records."""
    run_dir = Path(run_dir)
    summary = {}
    for line in (run_dir / "summary.tsv").read_text().splitlines()[1:]:
        key, value = line.split("\t", 1)
        summary[key] = value
    n_grid = tuple(int(x) for x in summary["n_grid"].split(","))
    rhos = tuple(float(x) for x in summary["rhos"].split(","))
    horizon = int(summary["horizon"])

    lines = (run_dir / "orbit_summary.tsv").read_text().splitlines()
    statuses, first_returns, s_rows, set_rows = [], [], [], []
    for line in lines[1:]:
        cells = line.split("\t")
        statuses.append(engine.STATUS_NAMES.index(cells[1]))
        first_returns.append(int(cells[2]))
        s_rows.append([int(c) if c else 0 for c in cells[3:]])
        set_rows.append([1 if c else 0 for c in cells[3:]])

    res = engine.BatchResult(
        status=np.array(statuses, dtype=np.int8),
        steps=np.zeros(len(statuses), dtype=np.int64),
        first_return=np.array(first_returns, dtype=np.int64),
        s_grid=np.array(s_rows, dtype=np.int64).reshape(len(statuses), len(n_grid)),
        grid_set=np.array(set_rows, dtype=np.int8).reshape(len(statuses), len(n_grid)),
        q_final=np.zeros((len(statuses), 2)), v_final=np.zeros((len(statuses), 2)),
        gate_final=np.zeros(len(statuses), dtype=np.int8),
        sub_final=np.zeros(len(statuses), dtype=np.int16),
        offset_final=np.zeros(len(statuses), dtype=np.int64),
        collisions=np.zeros(len(statuses), dtype=np.int64),
        max_flat_run=np.zeros(len(statuses), dtype=np.int64),
        v_norm_err=np.zeros(len(statuses)),
        flight_time=np.zeros(len(statuses)))
    stats = experiments._aggregate(res, len(statuses), horizon,
                                   np.array(n_grid, dtype=np.int64), rhos)
    emit_plot_data(stats, Path(out_dir))
    return 0

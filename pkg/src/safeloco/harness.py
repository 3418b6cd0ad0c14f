"""Run scenarios, write step logs and summaries, recompute summaries from logs.

``steps.csv`` starts with a version comment, then the fixed header, then one
row per control tick.  Floats are written with ``repr`` so that reading the
file back gives the exact values, which lets ``verify`` recompute
``summary.json`` bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from safeloco import NumericalError, ParameterError
from safeloco.config import ScenarioConfig, load_scenario
from safeloco.world import STEPLOG_COLUMNS, STEPLOG_VERSION, run_world

VERSION_LINE = f"# safeloco steplog v{STEPLOG_VERSION}"
TEXT_COLUMNS = {"contact"}
INT_COLUMNS = {"tick", "step_event", "step_index", "disturbed", "qp_feasible",
               "filter", "dob", "fallen"}
SETTLE_STEPS = 5


class SimulationFault(RuntimeError):
    """The rollout produced a non-finite state."""


class VerificationError(RuntimeError):
    pass


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_steps(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(VERSION_LINE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEPLOG_COLUMNS)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_steps(path) -> dict[str, np.ndarray | list[str]]:
    """Columns of a step log; numeric columns as float arrays."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != VERSION_LINE:
            raise VerificationError(f"{path}: expected {VERSION_LINE!r}, got {first!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != STEPLOG_COLUMNS:
            raise VerificationError(f"{path}: header does not match steplog v{STEPLOG_VERSION}")
        raw = list(reader)
    cols: dict[str, np.ndarray | list[str]] = {}
    for j, name in enumerate(STEPLOG_COLUMNS):
        vals = [r[j] for r in raw]
        cols[name] = vals if name in TEXT_COLUMNS else np.array(vals, dtype=float)
    return cols


def _finite_or_none(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _nanmin(a: np.ndarray) -> float | None:
    a = a[np.isfinite(a)]
    return float(a.min()) if a.size else None


def disturbance_window(disturbed: np.ndarray) -> tuple[int, int]:
    """Step-event index range: first disturbed step to the last one plus settling.

    Without any disturbed step the window is every step.
    """
    idx = np.flatnonzero(disturbed > 0)
    n = disturbed.size
    if idx.size == 0:
        return 0, n
    return int(idx[0]), min(int(idx[-1]) + SETTLE_STEPS + 1, n)


def velocity_tracking_error(cols) -> float | None:
    """RMS over the disturbance window of the pre-impact velocity error.

    The orbit velocity chosen at one step is the target for the pre-impact
    state of the next step, so the two are compared one step apart.
    """
    ev = cols["step_event"] == 1
    pre = np.column_stack([cols["pre_vx"][ev], cols["pre_vy"][ev]])
    orbit = np.column_stack([cols["orbit_vx"][ev], cols["orbit_vy"][ev]])
    lo, hi = disturbance_window(cols["disturbed"][ev])
    hi = min(hi, len(pre) - 1)
    if hi <= lo:
        return None
    err = pre[lo + 1:hi + 1] - orbit[lo:hi]
    return float(math.sqrt(float(np.mean(np.sum(err * err, axis=1)))))


def compute_metrics(cols, goal, goal_tol: float) -> dict:
    """Summary metrics from step-log columns alone."""
    n = len(cols["tick"])
    if n == 0:
        raise VerificationError("empty step log")
    ev = cols["step_event"] == 1
    final = np.array([cols["base_x"][-1], cols["base_y"][-1]])
    dist = float(np.hypot(*(final - np.asarray(goal, float))))
    min_h1, min_h2 = _nanmin(cols["h1"]), _nanmin(cols["h2"])
    steps = np.abs(cols["cmd_step_x"][ev])
    fallen = bool(cols["fallen"][-1])
    reached = dist <= goal_tol
    return {
        "ticks": n,
        "final_time": float(cols["time"][-1]),
        "final_distance": dist,
        "goal_reached": reached,
        "fallen": fallen,
        "min_h1": min_h1,
        "min_h2": min_h2,
        "min_h1_base": _nanmin(cols["h1_base"]),
        "min_h2_base": _nanmin(cols["h2_base"]),
        "max_step": float(steps.max()) if steps.size else None,
        "rms_velocity_error": velocity_tracking_error(cols),
        "contact_steps": int(np.sum(cols["disturbed"][ev] > 0)),
        "mass_estimates": [_finite_or_none(cols["m_est0"][-1]),
                           _finite_or_none(cols["m_est1"][-1])],
        # a run fails if it falls, stops short, or enters the primary safe-set complement
        "failure": fallen or not reached or (min_h1 is not None and min_h1 < 0.0),
    }


def _describe(scen: ScenarioConfig) -> dict:
    w = scen.world
    return {
        "scenario": scen.name, "mode": scen.mode, "seed": w.seed,
        "steplog_version": STEPLOG_VERSION,
        "goal": list(w.goal), "goal_tol": w.goal_tol,
        "boxes": [{"name": b.name, "mass": b.mass} for b in w.boxes],
    }


def run_scenario(scen: ScenarioConfig, out_dir, plots: bool | None = None) -> dict:
    """Simulate one scenario and write ``steps.csv`` and ``summary.json``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ParameterError(f"cannot create {out}: {exc.strerror}") from None
    try:
        world = run_world(scen.world)
    except NumericalError as exc:
        raise SimulationFault(str(exc)) from None
    steps = out / "steps.csv"
    write_steps(world.rows, steps)
    cols = read_steps(steps)
    summary = _describe(scen)
    summary["hierarchy_fallback"] = bool(world.hierarchy.fallback) if world.hierarchy else None
    summary["hierarchy"] = ([b.name for b in world.hierarchy.barriers]
                            if world.hierarchy else None)
    summary["metrics"] = compute_metrics(cols, scen.world.goal, scen.world.goal_tol)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if scen.plots if plots is None else plots:
        from safeloco.plots import barrier_svg, trajectory_svg
        (out / "trajectory.svg").write_text(trajectory_svg(cols, scen.world, world.hierarchy))
        (out / "barriers.svg").write_text(barrier_svg(cols))
    return summary


def verify_run(out_dir) -> list[str]:
    """Recompute one run's metrics from its CSV; returns mismatch descriptions."""
    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text())
    cols = read_steps(out / "steps.csv")
    fresh = compute_metrics(cols, summary["goal"], summary["goal_tol"])
    stored = summary["metrics"]
    return [f"{out}: {k}: stored {stored.get(k)!r} != recomputed {v!r}"
            for k, v in fresh.items() if stored.get(k) != v]


def verify_tree(root) -> tuple[int, list[str]]:
    """Verify every run below ``root``; returns (runs checked, problems)."""
    root = Path(root)
    runs = sorted(p.parent for p in root.rglob("summary.json"))
    problems = []
    for run in runs:
        try:
            problems += verify_run(run)
        except (OSError, ValueError, KeyError, VerificationError) as exc:
            problems.append(f"{run}: {exc}")
    if not runs:
        problems.append(f"{root}: no runs found")
    return len(runs), problems


def _run_job(job) -> dict:
    scen, out = job
    try:
        return {"ok": True, **run_scenario(scen, out)}
    except (SimulationFault, ParameterError, OSError) as exc:
        return {"ok": False, **_describe(scen), "error": f"{type(exc).__name__}: {exc}"}


def expand(scenarios) -> list[ScenarioConfig]:
    """Each scenario over its ``sweep_seeds`` consecutive seeds."""
    out = []
    for scen in scenarios:
        out += [scen.with_seed(scen.seed + k) for k in range(scen.sweep_seeds)]
    return out


def _ordering_correct(run: dict) -> bool | None:
    boxes = run.get("boxes", [])
    est = run.get("metrics", {}).get("mass_estimates", [])
    if len(boxes) != 2 or len(est) != 2 or None in est:
        return None
    heavy = 0 if boxes[0]["mass"] > boxes[1]["mass"] else 1
    return est[heavy] > est[1 - heavy]


def aggregate(runs: list[dict]) -> dict:
    ok = [r for r in runs if r["ok"]]
    ordering = [o for o in map(_ordering_correct, ok) if o is not None]
    return {
        "runs": len(runs),
        "faults": len(runs) - len(ok),
        "goal_reached_fraction": (sum(r["metrics"]["goal_reached"] for r in ok) / len(ok)
                                  if ok else None),
        "failure_fraction": (sum(r["metrics"]["failure"] for r in ok) / len(ok)
                             if ok else None),
        "ordering_runs": len(ordering),
        "ordering_correct_fraction": sum(ordering) / len(ordering) if ordering else None,
    }


def run_sweep(scenarios, out_dir, jobs: int = 1) -> dict:
    """Run every scenario (and seed) into its own directory; write ``sweep.json``."""
    scenarios = expand(scenarios)
    if not scenarios:
        raise ParameterError("empty sweep")
    root = Path(out_dir)
    job_list = [(s, root / f"{s.name}-{s.mode}-seed{s.seed}") for s in scenarios]
    names = [str(p) for _, p in job_list]
    if len(set(names)) != len(names):
        raise ParameterError("two sweep entries share a name, mode and seed")
    if jobs <= 1:
        runs = [_run_job(j) for j in job_list]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_run_job, job_list))
    report = {"aggregate": aggregate(runs), "runs": runs}
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def load_many(pattern: str) -> list[ScenarioConfig]:
    import glob
    paths = sorted(glob.glob(pattern, recursive=True))
    if not paths:
        raise ParameterError(f"no config matches {pattern!r}")
    return [load_scenario(p) for p in paths]


def default_jobs() -> int:
    return max(1, min(8, os.cpu_count() or 1))

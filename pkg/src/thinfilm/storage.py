"""File formats and trajectory persistence.

CSV for numeric series, JSON for structured configuration and reports;
everything grep-able and language-neutral.  Floats are written with
``repr`` so files round-trip exactly and repeated deterministic runs are
byte-identical.  All writes go through a write-temp-then-rename helper.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .density import GridDensity, QuantileDensity
from .functionals import FunctionalRecord

__all__ = [
    "atomic_write_text",
    "write_grid_csv", "read_grid_csv",
    "write_quantile_csv", "read_quantile_csv",
    "write_plan_csv",
    "save_trajectory", "load_trajectory_dir",
    "write_records_csv", "read_records_csv",
]

SNAPSHOT_DIR = "snapshots"


def _fmt(x: float) -> str:
    return repr(float(x))


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_grid_csv(path, g: GridDensity) -> None:
    lines = ["x,v"]
    x = g.x
    for i in range(g.count):
        lines.append(f"{_fmt(x[i])},{_fmt(g.values[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_grid_csv(path) -> GridDensity:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: expected two columns x,v")
    x, v = data[:, 0], data[:, 1]
    steps = np.diff(x)
    dx = float(steps[0])
    if dx <= 0 or np.max(np.abs(steps - dx)) > 1e-9 * max(abs(dx), 1.0):
        raise ValueError(f"{path}: grid is not uniformly spaced")
    return GridDensity(float(x[0]), dx, v)


def write_quantile_csv(path, q: QuantileDensity) -> None:
    lines = ["s,X"]
    s = q.fractions
    for i in range(q.n):
        lines.append(f"{_fmt(s[i])},{_fmt(q.positions[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_quantile_csv(path) -> QuantileDensity:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: expected two columns s,X")
    s, pos = data[:, 0], data[:, 1]
    n = s.size
    # fractions are (i + 1/2) M / n, so M = 2 n s_0 / 1 ... recover from s_0
    mass = float(s[0] * 2.0 * n / 1.0) if n else 0.0
    mass = float(s[-1] + s[0])  # (n - 1/2 + 1/2) M / n = M
    return QuantileDensity(mass, pos)


def write_plan_csv(path, plan) -> None:
    lines = ["s,X_source,X_target"]
    s = plan.source.fractions
    for i in range(plan.source.n):
        lines.append(
            f"{_fmt(s[i])},{_fmt(plan.source.positions[i])},"
            f"{_fmt(plan.target.positions[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_records_csv(path, records, p_values=()) -> None:
    cols = FunctionalRecord.csv_columns(p_values)
    lines = [",".join(cols)]
    for rec in records:
        d = rec.to_dict()
        lines.append(",".join(_fmt(d[c]) for c in cols))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_records_csv(path):
    """Records as a dict of column -> array."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def write_diagnostics_csv(path, diags) -> None:
    cols = ["step", "objective_initial", "objective_final", "inner_iters",
            "w2_sq_moved", "el_residual", "edge_slope_indicator"]
    lines = [",".join(cols)]
    for k, d in enumerate(diags):
        row = d.to_dict()
        vals = [str(k + 1)] + [
            str(int(row["inner_iters"])) if c == "inner_iters" else _fmt(row[c])
            for c in cols[1:]
        ]
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_trajectory(out_dir, traj, extra_config: dict | None = None) -> None:
    """Persist a trajectory directory:

    config.json, snapshots/NNNNNN.csv (quantile rows), records.csv (one
    functional record per snapshot) and diagnostics.csv (one row per step).
    """
    out = Path(out_dir)
    (out / SNAPSHOT_DIR).mkdir(parents=True, exist_ok=True)
    cfg = {"jko": traj.config.to_dict(), "mass": traj.mass,
           "p_values": list(traj.p_values)}
    if extra_config:
        cfg.update(extra_config)
    atomic_write_text(out / "config.json", json.dumps(cfg, indent=2) + "\n")
    for i, snap in enumerate(traj.snapshots):
        write_quantile_csv(out / SNAPSHOT_DIR / f"{i:06d}.csv", snap.density)
    write_records_csv(out / "records.csv",
                      [s.record for s in traj.snapshots], traj.p_values)
    write_diagnostics_csv(out / "diagnostics.csv",
                          [s.diagnostics for s in traj.snapshots
                           if s.diagnostics is not None])


def load_trajectory_dir(run_dir):
    """Load the pieces of a persisted run.

    Returns (config dict, list of snapshot QuantileDensity in order,
    records dict-of-arrays, diagnostics dict-of-arrays or None).
    Raises ValueError naming the offending file on corrupt snapshots.
    """
    run_dir = Path(run_dir)
    with open(run_dir / "config.json") as fh:
        cfg = json.load(fh)
    snaps = []
    snap_dir = run_dir / SNAPSHOT_DIR
    for p in sorted(snap_dir.glob("*.csv")):
        try:
            snaps.append(read_quantile_csv(p))
        except ValueError as exc:
            raise ValueError(f"corrupt snapshot {p}: {exc}") from exc
    if not snaps:
        raise ValueError(f"no snapshots found under {snap_dir}")
    records = read_records_csv(run_dir / "records.csv")
    diag_path = run_dir / "diagnostics.csv"
    diags = read_records_csv(diag_path) if diag_path.exists() else None
    return cfg, snaps, records, diags

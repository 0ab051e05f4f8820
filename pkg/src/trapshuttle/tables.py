"""Sampled trajectory tables: CSV with a ``#``-prefixed JSON header line.

Breakpoints appear as two rows with the same time: the left limit, then the
right limit. Together with the zeros of ``u`` (listed in the header under
``kinks``) they split the table into pieces on which every column is a
smooth polynomial, so costs re-integrated from the samples match the exact
values closely.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .core import PiecewiseTrajectory

COLUMNS = ("t", "q_c", "qdot_c", "u", "q0", "Ep")


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def control_zeros(traj: PiecewiseTrajectory) -> list[float]:
    zeros = []
    for a, b, u in traj.control_polynomials():
        if u.degree() < 1:
            continue
        for r in u.roots():
            if abs(r.imag) < 1e-12 * max(1.0, abs(r.real)) and a < r.real < b:
                zeros.append(float(r.real))
    return sorted(zeros)


def sample_trajectory(traj: PiecewiseTrajectory, mass: float, samples: int = 10_001) -> dict[str, np.ndarray]:
    """Sample ``traj`` on roughly ``samples`` rows, duplicating rows at breakpoints."""
    if samples < 2:
        raise ValueError("samples must be at least 2")
    tf, w2 = traj.tf, traj.omega0**2
    knots = sorted({*map(float, traj.breakpoints), *control_zeros(traj)})
    breaks = set(map(float, traj.breakpoints))
    t_list, side_list, edge_list = [], [], []

    def add(t, side, edge=False):
        t_list.append(t)
        side_list.append(side)
        edge_list.append(edge)

    add(0.0, "right", edge=True)
    for a, b in zip(knots, knots[1:]):
        n = max(2, 2 * int(round((samples - 1) * (b - a) / tf / 2.0)))
        add(a, "right")
        for t in np.linspace(a, b, n + 1)[1:-1]:
            add(float(t), "right")
        if b in breaks:
            add(b, "left")
    add(tf, "left", edge=True)

    t = np.array(t_list)
    q = np.empty_like(t)
    v = np.empty_like(t)
    u = np.empty_like(t)
    for i, (ti, side) in enumerate(zip(t_list, side_list)):
        q[i] = traj.position(ti, side)
        v[i] = traj.velocity(ti, side)
        u[i] = 0.0 if edge_list[i] else traj.control_limit(ti, side)
    q0 = q - u
    return {"t": t, "q_c": q, "qdot_c": v, "u": u, "q0": q0, "Ep": 0.5 * mass * w2 * u**2}


def write_csv(stream, header: dict, columns: dict[str, np.ndarray]) -> None:
    stream.write("# " + json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(stream, lineterminator="\n")
    names = list(columns)
    writer.writerow(names)
    for row in zip(*(columns[n] for n in names)):
        writer.writerow([_fmt(float(x)) if not isinstance(x, str) else x for x in row])


def write_json(stream, header: dict, columns: dict[str, np.ndarray]) -> None:
    data = {name: [float(x) if not isinstance(x, str) else x for x in col] for name, col in columns.items()}
    json.dump({"header": header, "data": data}, stream)
    stream.write("\n")


@dataclass
class Table:
    header: dict
    columns: dict[str, np.ndarray]


def _column(values) -> np.ndarray:
    # Text columns (regime, protocol names) stay as strings.
    try:
        return np.array([float(v) for v in values])
    except (TypeError, ValueError):
        return np.array([str(v) for v in values])


def read_table(text: str) -> Table:
    """Parse either the CSV or the JSON layout written above."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        obj = json.loads(stripped)
        return Table(obj["header"], {k: _column(v) for k, v in obj["data"].items()})
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing '#' JSON header line")
    header = json.loads(lines[0][1:])
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    names = next(reader)
    rows = [r for r in reader if r]
    columns = {n: _column([r[i] for r in rows]) for i, n in enumerate(names)}
    return Table(header, columns)


def pieces(table: Table) -> list[np.ndarray]:
    """Index arrays of the smooth pieces (edge rows excluded)."""
    t = table.columns["t"]
    kinks = set(table.header.get("kinks", []))
    out, current = [], []
    n = len(t)
    for i in range(n):
        current.append(i)
        paired = i + 1 < n and t[i + 1] == t[i]
        if paired or t[i] in kinks:
            if len(current) >= 2:
                out.append(np.array(current))
            current = [] if paired else [i]
    if len(current) >= 2:
        out.append(np.array(current))
    return out


def costs_from_table(table: Table) -> dict:
    """Re-integrate ``J_D``, ``J_E`` and ``Ep_bar`` piecewise with Simpson's rule."""
    t = table.columns["t"]
    u = table.columns["u"]
    mass = table.header["mass"]
    w2 = table.header["omega0"] ** 2
    jd = je = 0.0
    for idx in pieces(table):
        jd += simpson(np.abs(u[idx]), x=t[idx])
        je += simpson(u[idx] ** 2, x=t[idx])
    je *= 0.5 * mass * w2
    tf = float(t[-1])
    return {"J_T": tf, "J_D": float(jd), "J_E": float(je), "Ep_bar": float(je / tf)}


def check_table(table: Table, tol: float = 1e-9) -> dict:
    """Boundary and continuity checks on sampled data.

    Between consecutive rows the position may change by at most
    ``|v| dt + a_max dt^2 / 2`` and the velocity by ``a_max dt``, with
    ``a_max = omega0^2 max|u|``. Rows sharing a time stamp must agree in
    position and velocity.
    """
    c = table.columns
    t, q, v, u = c["t"], c["q_c"], c["qdot_c"], c["u"]
    d = table.header["d"]
    tf = float(t[-1])
    vscale = d / tf
    a_max = table.header["omega0"] ** 2 * float(np.max(np.abs(u)))
    checks = {
        "initial_position": abs(q[0]) <= tol * d,
        "initial_velocity": abs(v[0]) <= tol * vscale,
        "final_position": abs(q[-1] - d) <= tol * d,
        "final_velocity": abs(v[-1]) <= tol * vscale,
    }
    dt = np.diff(t)
    dq = np.abs(np.diff(q))
    dv = np.abs(np.diff(v))
    vmax = np.maximum(np.abs(v[:-1]), np.abs(v[1:]))
    q_ok = dq <= (vmax * dt + 0.5 * a_max * dt**2) * (1 + tol) + tol * d
    v_ok = dv <= a_max * dt * (1 + tol) + tol * vscale
    checks["position_continuity"] = bool(np.all(q_ok))
    checks["velocity_continuity"] = bool(np.all(v_ok))
    checks["time_order"] = bool(np.all(dt >= 0))
    bad = np.flatnonzero(~(q_ok & v_ok))
    return {
        "passed": all(bool(x) for x in checks.values()),
        "checks": {k: bool(x) for k, x in checks.items()},
        "first_bad_row": None if bad.size == 0 else int(bad[0]),
    }

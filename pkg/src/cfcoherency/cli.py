"""Command-line entry points: run a scenario, cluster its devices, sweep the
two-machine parameter plane, or estimate CFs from a trajectory CSV.

All numeric output is written in full-precision scientific notation with LF
line endings, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .coherency import (
    alpha_beta_sweep,
    cluster_trajectory,
    default_window,
    device_cf_numerical,
    numerical_cf,
    observer_independence_check,
)
from .errors import CfCoherencyError, SchemaError
from .scenario_io import load_scenario
from .simulation import Trajectory, run

EXIT_OK = 0
EXIT_SCHEMA = 1
EXIT_SOLVER = 2


def _fmt(x: float) -> str:
    return format(float(x), ".17e")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _fmt(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _device_cf_columns(traj: Trajectory) -> list[np.ndarray]:
    """Stationary-frame CF per device: the recorded analytical series where
    the model has one, the finite-difference estimate otherwise."""
    columns = []
    for name in traj.device_names:
        if name in traj.analytic_cf:
            columns.append(traj.analytic_cf[name])
        else:
            columns.append(device_cf_numerical(traj, name).values)
    return columns


def _write_trajectory_csv(traj: Trajectory, path: Path) -> None:
    header = ["time"]
    for lbl in traj.bus_labels:
        header += [f"v{lbl}_re", f"v{lbl}_im"]
    for name in traj.device_names:
        header += [f"i_{name}_re", f"i_{name}_im"]
    for name in traj.device_names:
        header += [f"rho_{name}", f"omega_{name}"]
    cf_columns = _device_cf_columns(traj)

    def rows():
        for k in range(traj.times.size):
            row = [traj.times[k]]
            for h in range(traj.voltages.shape[1]):
                v = traj.voltages[k, h]
                row += [v.real, v.imag]
            for d in range(traj.currents.shape[1]):
                i = traj.currents[k, d]
                row += [i.real, i.imag]
            for s in cf_columns:
                row += [s[k].real, s[k].imag]
            yield row

    _write_csv(path, header, rows())


def _write_cf_csv(traj: Trajectory, path: Path) -> None:
    """Per-device stationary-frame CFs; `event_mask` flags the samples
    adjacent to discrete events where finite-difference estimates are
    impulsive."""
    header = ["time"]
    for name in traj.device_names:
        header += [f"rho_{name}", f"omega_{name}"]
    series = _device_cf_columns(traj)
    header.append("event_mask")
    valid = traj.estimator_valid()

    def rows():
        for k in range(traj.times.size):
            row = [traj.times[k]]
            for s in series:
                row += [s[k].real, s[k].imag]
            row.append("0" if valid[k] else "1")
            yield row

    _write_csv(path, header, rows())


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    _apply_overrides(scenario, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = run(scenario)
    _write_trajectory_csv(traj, out / "trajectory.csv")
    _write_cf_csv(traj, out / "cf.csv")
    n_steps = traj.times.size - 1
    print(
        f"run: {n_steps} steps, {traj.newton_iters} Newton iterations, "
        f"{traj.events_applied} event(s) applied"
    )
    print(f"wrote {out / 'trajectory.csv'} and {out / 'cf.csv'}")
    return EXIT_OK


def _cmd_cluster(args) -> int:
    scenario = load_scenario(args.scenario)
    _apply_overrides(scenario, args)
    k = args.k if args.k is not None else scenario.analysis.k_clusters
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = run(scenario)
    window = scenario.analysis.window or default_window(traj)
    matrix, tree, groups = cluster_trajectory(
        traj, k, scenario.analysis.cluster_devices, window
    )
    labels = matrix.labels
    _write_csv(
        out / "distance.csv",
        ["device"] + labels,
        ([name] + list(matrix.values[i]) for i, name in enumerate(labels)),
    )
    by_name = {name: gid for gid, group in enumerate(groups) for name in group}
    _write_csv(
        out / "partition.csv",
        ["device", "group"],
        ([name, str(by_name[name])] for name in labels),
    )
    _write_csv(
        out / "dendrogram.csv",
        ["step", "left", "right", "height"],
        (
            [str(step), str(left), str(right), height]
            for step, (left, right, height) in enumerate(tree.merges)
        ),
    )
    print(f"cluster: k={k}, window=[{window[0]:g}, {window[1]:g}]")
    for gid, group in enumerate(groups):
        print(f"  group {gid}: {', '.join(sorted(group))}")
    if scenario.analysis.observation_points and len(labels) >= 2:
        dev = observer_independence_check(
            traj, scenario.network, labels[0], labels[1],
            scenario.analysis.observation_points, window,
        )
        print(f"observer-independence spot check ({labels[0]}, {labels[1]}): {dev:.3e} pu")
    print(f"wrote distance.csv, partition.csv, dendrogram.csv under {out}")
    return EXIT_OK


def _parse_grid(args) -> tuple[np.ndarray, np.ndarray]:
    if args.alpha or args.beta:
        if not (args.alpha and args.beta):
            raise SchemaError("$", "--alpha and --beta must be given together")
        alphas = np.array([float(a) for a in args.alpha.split(",")])
        betas = np.array([float(b) for b in args.beta.split(",")])
    else:
        n = args.grid
        alphas = betas = np.linspace(0.05, 0.95, n)
    if np.any(alphas <= 0) or np.any(alphas >= 1) or np.any(betas <= 0) or np.any(betas >= 1):
        raise SchemaError("$", "grid values must lie strictly inside (0, 1)")
    return alphas, betas


def _cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    sm_count = sum(1 for d in scenario.devices if d.kind == "sm")
    if sm_count != 2 or scenario.network.n_bus != 1:
        raise SchemaError("$", "sweep needs the single-bus two-machine template scenario")
    alphas, betas = _parse_grid(args)
    t_end = args.t_end if args.t_end is not None else scenario.t_end
    dt = args.dt if args.dt is not None else scenario.dt
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = alpha_beta_sweep(alphas, betas, t_end=t_end, dt=dt, workers=args.workers)
    _write_csv(
        out / "sweep.csv",
        ["alpha\\beta"] + [_fmt(b) for b in betas],
        ([_fmt(a)] + list(result.values[ia]) for ia, a in enumerate(alphas)),
    )
    print(f"sweep: {alphas.size}x{betas.size} cells, {len(result.failures)} failed")
    for a, b, err in result.failures:
        print(f"  cell ({a:g}, {b:g}) failed: {err}")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_cf(args) -> int:
    path = Path(args.trajectory)
    if not path.exists():
        raise SchemaError("$", f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if header[0] != "time":
        raise SchemaError("$.header", "first column must be 'time'")
    # consume leading <name>_re/<name>_im pairs; trailing extra columns (for
    # instance the CF columns of a run's trajectory.csv) are ignored
    pairs = []
    col = 1
    while col + 1 < len(header) and header[col].endswith("_re"):
        name = header[col][:-3]
        if header[col + 1] != f"{name}_im":
            raise SchemaError(f"$.header[{col + 1}]", f"expected {name}_im after {header[col]}")
        pairs.append((name, col))
        col += 2
    if not pairs:
        raise SchemaError("$.header", "no <name>_re/<name>_im column pairs found")
    times = data[:, 0]
    if times.size < 3:
        raise SchemaError("$", "need at least 3 samples")
    dt = float(times[1] - times[0])
    omega_base = 2.0 * np.pi * args.f_nominal
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header_out = ["time"]
    columns = []
    for name, c in pairs:
        series = numerical_cf(data[:, c] + 1j * data[:, c + 1], dt, omega_base)
        header_out += [f"rho_{name}", f"omega_{name}"]
        columns.append(series.values)

    def rows():
        for k in range(times.size):
            row = [times[k]]
            for s in columns:
                row += [s[k].real, s[k].imag]
            yield row

    _write_csv(out / "cf.csv", header_out, rows())
    print(f"cf: {len(pairs)} signal(s), {times.size} samples")
    print(f"wrote {out / 'cf.csv'}")
    return EXIT_OK


def _apply_overrides(scenario, args) -> None:
    if args.dt is not None:
        scenario.dt = args.dt
    if args.t_end is not None:
        scenario.t_end = args.t_end
    if args.window is not None:
        scenario.analysis.window = (args.window[0], args.window[1])


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    """Register the global flags; subcommand parsers use SUPPRESS defaults so
    a flag given before the subcommand is not clobbered afterwards."""

    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument(
        "--out", default=default("out"), help="output directory (default: ./out)"
    )
    parser.add_argument(
        "--dt", type=float, default=default(None), help="override integration step [s]"
    )
    parser.add_argument(
        "--t-end", type=float, default=default(None), help="override horizon [s]"
    )
    parser.add_argument(
        "--window", type=float, nargs=2, metavar=("T0", "T1"), default=default(None),
        help="override analysis window [s]",
    )
    parser.add_argument(
        "--seedless", action="store_true", default=default(False),
        help="reserved; the toolkit never uses randomness, so this flag is rejected",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfcoherency",
        description="Transient simulation and complex-frequency coherency analysis",
    )
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario, write trajectory and CF CSVs")
    _add_global_flags(p_run, suppress=True)
    p_run.add_argument("scenario")
    p_run.set_defaults(func=_cmd_run)

    p_cluster = sub.add_parser("cluster", help="simulate and group devices by coherency")
    _add_global_flags(p_cluster, suppress=True)
    p_cluster.add_argument("scenario")
    p_cluster.add_argument("--k", type=int, default=None, help="number of groups")
    p_cluster.set_defaults(func=_cmd_cluster)

    p_sweep = sub.add_parser("sweep", help="two-machine inertia/reactance split sweep")
    _add_global_flags(p_sweep, suppress=True)
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--grid", type=int, default=21, help="NxN grid over [0.05, 0.95]")
    p_sweep.add_argument("--alpha", default=None, help="explicit comma-separated alpha values")
    p_sweep.add_argument("--beta", default=None, help="explicit comma-separated beta values")
    p_sweep.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cf = sub.add_parser("cf", help="numerical CF of a trajectory CSV")
    _add_global_flags(p_cf, suppress=True)
    p_cf.add_argument("trajectory")
    p_cf.add_argument("--f-nominal", type=float, default=60.0, help="base frequency [Hz]")
    p_cf.set_defaults(func=_cmd_cf)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seedless:
        print(
            "error: --seedless is reserved: there is no randomness to disable", file=sys.stderr
        )
        return EXIT_SCHEMA
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except CfCoherencyError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

"""Batch command-line front end.

Subcommands: ``simulate`` (event-driven paths), ``hydro`` / ``perturbed``
(deterministic solves), ``rate`` (rate-function evaluation of a stored
trajectory), ``verify`` (named cross-check suites).  Every command writes a
run manifest with the fully resolved inputs, the seed, and content hashes of
the produced files, so a run can be reproduced and checked hash for hash.

Bulk numerics go to CSV with 17-significant-digit floats (lossless for
doubles); specs and reports go to JSON.  Exit codes: 0 success, 2 bad usage
or bad spec, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .fields import (DensityField, DensityTrajectory, PerturbationField,
                     SineProfile, UniformProfile, profile_to_json)
from .hydro import SolverSpec, perturbed_magnetization_check, solve_perturbed
from .ldp import total_rate
from .rates import SwitchRateFamily
from .rng import replica_seed
from .simulate import SimulationSpec, run_path
from .verify import SUITES, run_suite

_FMT = "{:.17g}"


def _fmt(x: float) -> str:
    return _FMT.format(float(x))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, spec_doc: dict, outputs: list,
                    t0: float) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "spec": spec_doc,
        "wall_clock_seconds": time.time() - t0,
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# argument parsing helpers


def _load_json_arg(text: str) -> dict:
    if text.startswith("@"):
        return json.loads(Path(text[1:]).read_text())
    return json.loads(text)


def _parse_rate(text: str | None) -> SwitchRateFamily:
    if text is None:
        return SwitchRateFamily.constant()
    doc = _load_json_arg(text)
    if "rate" in doc:
        doc = doc["rate"]
    return SwitchRateFamily.from_json(doc)


def _parse_field(text: str | None) -> PerturbationField | None:
    if text is None:
        return None
    doc = _load_json_arg(text)
    if "field" in doc:
        doc = doc["field"]
    return PerturbationField.from_json(doc)


_PROFILE_RE = re.compile(r"^(uniform|sine)\(([^)]*)\)$")


def _parse_initial(text: str, grid_for_csv: int | None = None):
    """Named profile `uniform(a,b)` / `sine(mean,amp,layer)` or a density CSV path."""
    match = _PROFILE_RE.match(text.strip())
    if match:
        kind, argstr = match.groups()
        parts = [p.strip() for p in argstr.split(",")]
        if kind == "uniform":
            return UniformProfile(float(parts[0]), float(parts[1]))
        layer = parts[2] if len(parts) > 2 else "plus"
        return SineProfile(float(parts[0]), float(parts[1]), layer)
    return read_density_csv(Path(text))


def _parse_times(text: str) -> tuple:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


# ---------------------------------------------------------------------------
# CSV formats


def write_density_csv(field: DensityField, path: Path):
    with open(path, "w") as fh:
        fh.write("x_index,sigma,value\n")
        for sigma, col in ((1, 0), (-1, 1)):
            for i in range(field.grid_size):
                fh.write(f"{i},{sigma},{_fmt(field.values[i, col])}\n")


def read_density_csv(path: Path) -> DensityField:
    data = np.genfromtxt(path, delimiter=",", names=True)
    idx = data["x_index"].astype(int)
    grid = idx.max() + 1
    values = np.zeros((grid, 2))
    cols = np.where(data["sigma"] > 0, 0, 1).astype(int)
    values[idx, cols] = data["value"]
    return DensityField(values)


def write_trajectory_csv(traj: DensityTrajectory, path: Path):
    with open(path, "w") as fh:
        fh.write("t,x_index,sigma,value\n")
        for k, t in enumerate(traj.t_grid):
            ts = _fmt(t)
            for sigma, col in ((1, 0), (-1, 1)):
                for i in range(traj.grid_size):
                    fh.write(f"{ts},{i},{sigma},{_fmt(traj.fields[k, i, col])}\n")


def read_trajectory_csv(path: Path) -> DensityTrajectory:
    data = np.genfromtxt(path, delimiter=",", names=True)
    times = np.unique(data["t"])
    grid = int(data["x_index"].max()) + 1
    fields = np.zeros((times.size, grid, 2))
    t_pos = np.searchsorted(times, data["t"])
    cols = np.where(data["sigma"] > 0, 0, 1).astype(int)
    fields[t_pos, data["x_index"].astype(int), cols] = data["value"]
    return DensityTrajectory(times, fields)


def write_snapshots_csv(record, path: Path):
    with open(path, "w") as fh:
        fh.write("t,x_index,sigma,count\n")
        for t, snap in zip(record.snapshot_times, record.snapshots):
            ts = _fmt(t)
            for sigma, col in ((1, 0), (-1, 1)):
                for i in range(snap.n_sites):
                    c = snap.counts[i, col]
                    if c:
                        fh.write(f"{ts},{i},{sigma},{c}\n")


def read_snapshots_csv(path: Path, n_sites: int):
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    times = np.unique(data["t"])
    counts = np.zeros((times.size, n_sites, 2), dtype=np.int64)
    t_pos = np.searchsorted(times, data["t"])
    cols = np.where(data["sigma"] > 0, 0, 1).astype(int)
    counts[t_pos, data["x_index"].astype(int), cols] = data["count"].astype(np.int64)
    return times, counts


def write_magnetization_csv(times, values, path: Path):
    with open(path, "w") as fh:
        fh.write("t,m\n")
        for t, m in zip(times, values):
            fh.write(f"{_fmt(t)},{_fmt(m)}\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    rate = _parse_rate(args.rate)
    tilt = _parse_field(args.tilt)
    log_field = _parse_field(args.log_field)
    initial = _parse_initial(args.initial)
    snaps = _parse_times(args.snapshots) if args.snapshots else (args.t_final,)

    base = SimulationSpec(
        n_sites=args.n_sites, t_final=args.t_final, seed=args.seed,
        initial=initial, rate_family=rate, tilt=tilt,
        snapshot_times=snaps, log_weight_field=log_field,
    )
    spec_doc = {
        "n_sites": args.n_sites, "t_final": args.t_final, "seed": args.seed,
        "replicas": args.replicas, "rate": rate.to_json(),
        "tilt": tilt.to_json() if tilt else None,
        "log_field": log_field.to_json() if log_field else None,
        "initial": profile_to_json(initial), "snapshots": list(snaps),
    }

    outputs = []
    m_final = []
    logz = []
    for i in range(args.replicas):
        tag = f"_r{i}" if args.replicas > 1 else ""
        rec = run_path(replace(base, seed=replica_seed(args.seed, i)))
        snap_path = out_dir / f"snapshots{tag}.csv"
        write_snapshots_csv(rec, snap_path)
        mag_path = out_dir / f"magnetization{tag}.csv"
        write_magnetization_csv(rec.snapshot_times, rec.magnetization_series, mag_path)
        diag = {
            "seed": rec.spec.seed,
            "n_particles": rec.initial.total,
            "jump_counts": rec.jump_counts,
            "log_radon_nikodym": rec.log_radon_nikodym,
            "dynkin_residuals": {k: v.tolist() for k, v in rec.dynkin_residuals.items()},
            "quadratic_variation": rec.quadratic_variation,
        }
        diag_path = out_dir / f"diagnostics{tag}.json"
        diag_path.write_text(json.dumps(diag, indent=2) + "\n")
        outputs += [snap_path, mag_path, diag_path]
        m_final.append(float(rec.magnetization_series[-1]))
        if rec.log_radon_nikodym is not None:
            logz.append(rec.log_radon_nikodym)

    if args.replicas > 1:
        agg = {
            "replicas": args.replicas,
            "magnetization_final_mean": float(np.mean(m_final)),
            "magnetization_final_var": float(np.var(m_final, ddof=1)) if args.replicas > 1 else 0.0,
            "logz_samples": logz or None,
        }
        agg_path = out_dir / "aggregate.json"
        agg_path.write_text(json.dumps(agg, indent=2) + "\n")
        outputs.append(agg_path)

    _write_manifest(out_dir, "simulate", spec_doc, outputs, t0)
    return 0


def _run_solver(args, tilted: bool) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    rate = _parse_rate(args.rate)
    tilt = _parse_field(args.tilt) if tilted else None
    initial = _parse_initial(args.initial)
    if not isinstance(initial, DensityField):
        initial = initial.to_density_field(args.grid)

    spec = SolverSpec(grid_size=args.grid, t_final=args.t_final, initial=initial,
                      rate_family=rate, tilt=tilt, store_stride=args.stride)
    traj = solve_perturbed(spec)

    traj_path = out_dir / "trajectory.csv"
    write_trajectory_csv(traj, traj_path)
    meta = {
        "grid_size": args.grid,
        "dt": spec.dt,
        "t_final_requested": args.t_final,
        "t_final_effective": spec.effective_t_final,
        "stride": args.stride,
        "rate": rate.to_json(),
        "tilt": tilt.to_json() if tilt else None,
        "mass_drift": traj.mass_drift(),
        "magnetization_balance_residual":
            perturbed_magnetization_check(traj, rate, tilt) if traj.n_slices >= 3 else None,
    }
    meta_path = out_dir / "metadata.json"
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    spec_doc = {"grid": args.grid, "t_final": args.t_final, "stride": args.stride,
                "rate": rate.to_json(), "tilt": tilt.to_json() if tilt else None,
                "initial": profile_to_json(initial)}
    _write_manifest(out_dir, "perturbed" if tilted else "hydro", spec_doc,
                    [traj_path, meta_path], t0)
    return 0


def cmd_hydro(args) -> int:
    return _run_solver(args, tilted=False)


def cmd_perturbed(args) -> int:
    return _run_solver(args, tilted=True)


def cmd_rate(args) -> int:
    t0 = time.time()
    rate = _parse_rate(args.rate)

    if args.trajectory:
        traj = read_trajectory_csv(Path(args.trajectory))
    elif args.snapshots_csv:
        if not args.n_sites or not args.bin:
            raise ValueError("--snapshots-csv needs --n-sites and --bin")
        times, counts = read_snapshots_csv(Path(args.snapshots_csv), args.n_sites)
        scale = args.bin / args.n_sites
        fields = counts.astype(float).reshape(times.size, args.bin,
                                              args.n_sites // args.bin, 2).sum(axis=2) * scale
        traj = DensityTrajectory(times, fields)
    else:
        raise ValueError("need --trajectory or --snapshots-csv")

    reference = _parse_initial(args.reference_density)
    if not isinstance(reference, DensityField):
        reference = reference.to_density_field(traj.grid_size)

    report = total_rate(traj, reference, rate, epsilon=args.epsilon)
    doc = report.to_json()
    doc["reconstructed_tilt_final_slice"] = [float(v) for v in report.reconstructed_tilt[-1]]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    spec_doc = {"trajectory": args.trajectory, "snapshots_csv": args.snapshots_csv,
                "reference_density": args.reference_density, "epsilon": args.epsilon,
                "rate": rate.to_json()}
    _write_manifest(out.parent, "rate", spec_doc, [out], t0)
    return 0


def cmd_verify(args) -> int:
    report = run_suite(args.suite, quick=args.quick)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
        _write_manifest(out.parent, "verify",
                        {"suite": args.suite, "quick": args.quick}, [out], time.time())
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtp-ldp",
        description="Run-and-tumble lattice gas: simulate, solve, and rate trajectories.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (default: RTP_LDP_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="exact event-driven particle paths")
    p_sim.add_argument("--n-sites", type=int, required=True)
    p_sim.add_argument("--t-final", type=float, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--replicas", type=int, default=1)
    p_sim.add_argument("--rate", default=None, help='JSON or @file, e.g. {"kind":"curie_weiss","beta":2}')
    p_sim.add_argument("--tilt", default=None, help="perturbation field JSON or @file")
    p_sim.add_argument("--log-field", default=None, help="field whose path density to accumulate")
    p_sim.add_argument("--initial", default="uniform(1,1)",
                       help="uniform(a,b), sine(mean,amp,layer), or density CSV path")
    p_sim.add_argument("--snapshots", default=None, help="comma-separated times")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    for name, fn in (("hydro", cmd_hydro), ("perturbed", cmd_perturbed)):
        p = sub.add_parser(name, help=f"deterministic {name} solve")
        p.add_argument("--grid", type=int, required=True)
        p.add_argument("--t-final", type=float, required=True)
        p.add_argument("--rate", default=None)
        if name == "perturbed":
            p.add_argument("--tilt", default=None)
        p.add_argument("--initial", default="uniform(1,1)")
        p.add_argument("--stride", type=int, default=1)
        p.add_argument("--out-dir", required=True)
        p.set_defaults(func=fn)

    p_rate = sub.add_parser("rate", help="evaluate the rate function of a trajectory")
    p_rate.add_argument("--trajectory", default=None, help="trajectory CSV")
    p_rate.add_argument("--snapshots-csv", default=None, help="simulator snapshot CSV")
    p_rate.add_argument("--n-sites", type=int, default=None)
    p_rate.add_argument("--bin", type=int, default=None)
    p_rate.add_argument("--reference-density", required=True)
    p_rate.add_argument("--rate", default=None)
    p_rate.add_argument("--epsilon", type=float, default=1e-6)
    p_rate.add_argument("--out", required=True)
    p_rate.set_defaults(func=cmd_rate)

    p_ver = sub.add_parser("verify", help="run a named verification suite")
    p_ver.add_argument("suite", choices=sorted(SUITES))
    p_ver.add_argument("--quick", action="store_true", help="reduced-scale smoke run")
    p_ver.add_argument("--out", default=None)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("RTP_LDP_THREADS"):
        threads = int(os.environ["RTP_LDP_THREADS"])
    if threads is not None:
        import numba

        numba.set_num_threads(min(max(1, threads), numba.config.NUMBA_NUM_THREADS))
    try:
        return args.func(args)
    except (ValueError, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

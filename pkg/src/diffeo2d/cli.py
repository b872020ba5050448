"""Command-line interface.

Subcommands: register, warp, invert, correspond, shoot, kernel-apply,
phantom, experiment-lesion. Every run prints one deterministic summary
line ending in "OK", or in "ERR<code>" on failure. Exit codes: 0 success,
2 usage, 3 I/O, 4 file format, 5 configuration, 6 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from . import fileio, flows, pulsons
from .errors import ConfigError, Diffeo2DError, FileFormatError
from .grid import Deformation, Image, VectorField, invert, warp_image
from .matching import register
from .phantom import make_phantom_pair, run_lesion_experiment

_EXIT_IO = 3
_EXIT_FORMAT = 4
_EXIT_CONFIG = 5
_EXIT_NUMERIC = 6


def _read_image(path) -> Image:
    if path.endswith(".field"):
        return fileio.read_scalar_field(path)
    return fileio.read_pgm(path)


def _cmd_register(args):
    cfg = fileio.parse_config(args.config)
    src = _read_image(args.source)
    tgt = _read_image(args.target)
    res = register(src, tgt, cfg)

    prefix = args.out_prefix
    fileio.write_pgm(prefix + "_warped.pgm", res.warped)
    fileio.write_field(prefix + "_phi.field", res.phi_right.endpoint().disp)
    fileio.write_field(prefix + "_phi_inv.field", res.phi_inv.disp)
    fileio.write_field(prefix + "_dispx.field",
                       Image(src.grid, res.phi_right.endpoint().disp.ux))
    with open(prefix + "_trace.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "energy", "ssd", "objective"])
        for it, energy, sval, obj in res.trace_rows:
            w.writerow([it, repr(energy), repr(sval), repr(obj)])
    if args.save_path:
        for k, snap in enumerate(res.phi_right.snapshots):
            fileio.write_field(f"{prefix}_path_phi_{k:03d}.field", snap.disp)
        with open(prefix + "_path_energies.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "energy"])
            for k, e in enumerate(res.step_energies):
                w.writerow([k, repr(e)])
    print(f"register: iters={res.n_iters} final_ssd={res.final_ssd:.6g} "
          f"energy={res.final_energy:.6g} OK")
    return 0


def _cmd_warp(args):
    img = _read_image(args.image)
    disp = fileio.read_vector_field(args.field)
    out = warp_image(img, Deformation(disp))
    fileio.write_pgm(args.out, out)
    print(f"warp: wrote {args.out} OK")
    return 0


def _cmd_invert(args):
    disp = fileio.read_vector_field(args.field)
    phi_inv = invert(Deformation(disp), max_iter=args.max_iter,
                     tol=args.tol if args.tol > 0 else None)
    fileio.write_field(args.out, phi_inv.disp)
    print(f"invert: wrote {args.out} OK")
    return 0


def _load_path(prefix):
    snaps = []
    k = 0
    while True:
        p = f"{prefix}_path_phi_{k:03d}.field"
        if not os.path.exists(p):
            break
        snaps.append(Deformation(fileio.read_vector_field(p)))
        k += 1
    if len(snaps) < 2:
        raise FileNotFoundError(f"no deformation path at {prefix}_path_phi_***.field")
    return flows.DeformationPath(snaps)


def _cmd_correspond(args):
    phi = _load_path(args.phi_path_prefix)
    energies = []
    epath = args.phi_path_prefix + "_path_energies.csv"
    if os.path.exists(epath):
        with open(epath, newline="") as f:
            rows = list(csv.reader(f))
        energies = [float(r[1]) for r in rows[1:]]
    psi = flows.correspond_left_right(phi)

    prefix = args.out_prefix
    for k, snap in enumerate(psi.snapshots):
        fileio.write_field(f"{prefix}_psi_{k:03d}.field", snap.disp)

    end_diff = max(
        float(np.max(np.abs(psi.endpoint().disp.ux - phi.endpoint().disp.ux))),
        float(np.max(np.abs(psi.endpoint().disp.uy - phi.endpoint().disp.uy)))
    ) / phi.grid.spacing
    with open(prefix + "_energies.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "energy_right", "energy_left"])
        n = len(energies)
        for k, e in enumerate(energies):
            # left step energies are the right ones in reverse order
            w.writerow([k, repr(e), repr(energies[n - 1 - k])])
        if energies:
            tot = math.fsum(energies)
            tot_left = math.fsum(reversed(energies))
            w.writerow(["total", repr(tot), repr(tot_left)])
        w.writerow(["endpoint_inf_px", repr(end_diff), repr(end_diff)])
    print(f"correspond: steps={phi.n_steps} endpoint_diff_px={end_diff:.3g} OK")
    return 0


def _parse_points(text):
    pts = []
    for chunk in text.split(";"):
        xs = chunk.split(",")
        if len(xs) != 2:
            raise ValueError(f"bad point {chunk!r}; expected 'x,y'")
        pts.append((float(xs[0]), float(xs[1])))
    return np.array(pts)


def _cmd_shoot(args):
    if args.state:
        with open(args.state, newline="") as f:
            rows = [r for r in csv.reader(f) if r]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        arr = np.array([[float(v) for v in r[:4]] for r in rows])
        Q, P = arr[:, :2], arr[:, 2:]
    else:
        if not (args.q and args.p):
            raise ValueError("either --state or both --q and --p are required")
        Q = _parse_points(args.q)
        P = _parse_points(args.p)
    if args.n and args.n != len(Q):
        raise ValueError(f"--n {args.n} disagrees with {len(Q)} provided pulsons")
    state = pulsons.PulsonState(Q, P)
    kernel = pulsons.GaussianScalarKernel(args.sigma)
    traj = pulsons.shoot(state, kernel, args.side, args.T, args.steps)
    pulsons.write_trajectory_csv(args.out, traj, kernel, args.T)
    h0 = pulsons.hamiltonian(traj[0], kernel)
    h1 = pulsons.hamiltonian(traj[-1], kernel)
    drift = pulsons.hamiltonian_drift(traj, kernel)
    print(f"shoot: side={args.side} H0={h0:.12g} H1={h1:.12g} drift={drift:.3g} OK")
    return 0


def _is_number(tok):
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _cmd_kernel_apply(args):
    cfg = fileio.parse_config(args.config)
    p = fileio.read_vector_field(args.infield)
    from .kernels import apply_kernel
    v = apply_kernel(cfg.kernel, p)
    fileio.write_field(args.out, v)
    print(f"kernel-apply: wrote {args.out} OK")
    return 0


def _cmd_phantom(args):
    pair = make_phantom_pair(args.size, args.seed, lesion=args.lesion)
    prefix = args.out_prefix
    fileio.write_pgm(prefix + "_source.pgm", pair.source)
    fileio.write_pgm(prefix + "_target.pgm", pair.target)
    fileio.write_pgm(prefix + "_lesion.pgm", Image(pair.lesion.grid, pair.lesion.data))
    fileio.write_pgm(prefix + "_lesion_dilated.pgm",
                     Image(pair.lesion.grid, pair.lesion_dilated.data))
    print(f"phantom: size={args.size} seed={args.seed} lesion={int(args.lesion)} OK")
    return 0


def _cmd_experiment_lesion(args):
    reports, flag = run_lesion_experiment(size=args.size, seed=args.seed,
                                          max_iters=args.max_iters,
                                          out_dir=args.out_dir)
    means = {(r.strategy, r.c): r.mean_abs_dispx_lesion for r in reports}
    print(f"experiment-lesion: runs={len(reports)} c05_best={flag} "
          f"mean_dispx_nonsym={means[('nonsymmetric_masked', None)]:.4g} OK")
    return 0


def _build_parser():
    ap = argparse.ArgumentParser(prog="diffeo2d",
                                 description="2D diffeomorphic image matching tools")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="match a source image onto a target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--save-path", action="store_true",
                   help="also write the deformation path snapshots and step energies")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("warp", help="apply a displacement field to an image")
    p.add_argument("--image", required=True)
    p.add_argument("--field", required=True, help="components=2 field file (inverse map)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("invert", help="numerically invert a deformation")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-iter", type=int, default=60)
    p.add_argument("--tol", type=float, default=0.0, help="physical units; 0 = default")
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("correspond",
                       help="build the companion left-geodesic of a stored path")
    p.add_argument("--phi-path-prefix", required=True)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_correspond)

    p = sub.add_parser("shoot", help="integrate pulson dynamics")
    p.add_argument("--n", type=int, default=0, help="expected pulson count (checked)")
    p.add_argument("--q", help="positions 'x,y;x,y;...'")
    p.add_argument("--p", help="momenta 'x,y;x,y;...'")
    p.add_argument("--state", help="CSV file with rows Qx,Qy,Px,Py")
    p.add_argument("--side", choices=("left", "right"), default="right")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_shoot)

    p = sub.add_parser("kernel-apply", help="apply a configured kernel to a field")
    p.add_argument("--config", required=True)
    p.add_argument("--infield", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_kernel_apply)

    p = sub.add_parser("phantom", help="generate a bilateral phantom pair")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--lesion", action="store_true")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("experiment-lesion",
                       help="run the soft-symmetry lesion experiment")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--max-iters", type=int, default=120)
    p.set_defaults(func=_cmd_experiment_lesion)

    return ap


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    cmd = args.command
    try:
        return args.func(args)
    except OSError as e:
        print(f"{cmd}: {type(e).__name__}: {e} ERR{_EXIT_IO}")
        return _EXIT_IO
    except FileFormatError as e:
        print(f"{cmd}: {type(e).__name__}: {e} ERR{_EXIT_FORMAT}")
        return _EXIT_FORMAT
    except ConfigError as e:
        print(f"{cmd}: {type(e).__name__}: {e} ERR{_EXIT_CONFIG}")
        return _EXIT_CONFIG
    except (Diffeo2DError, ValueError) as e:
        print(f"{cmd}: {type(e).__name__}: {e} ERR{_EXIT_NUMERIC}")
        return _EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

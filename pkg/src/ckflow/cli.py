"""Command line entry point: run / verify / profile / seed.

Exit codes: 0 ok, 1 assumption failure, 2 flow error (starshape lost, mesh
degenerate, domain exit), 3 non-convergence, 64 bad config.  Every exit
path prints `STATUS=<ok|assumptions|flow|nonconv|config>` to stderr.
"""

import argparse
import os
import sys

import numpy as np

from . import ambient, ckv, diagnostics, flow, surface
from .config import load_config
from .errors import (
    ConfigError,
    DomainExit,
    MeshDegenerate,
    NonConvergence,
    ProfileNotMonotone,
    ScheduleInfeasible,
    SeedInfeasible,
    StarshapeLost,
)

STATUS_CODE = {"ok": 0, "assumptions": 1, "flow": 2, "nonconv": 3, "config": 64}


def _status(name):
    print(f"STATUS={name}", file=sys.stderr)
    return STATUS_CODE[name]


def make_geometry(cfg):
    kind = cfg["geometry"]
    if kind == "poincare_ball":
        return ambient.make_geometry(kind, radius=cfg["poincare_ball.radius"])
    return ambient.make_geometry(kind)


def make_pair(cfg):
    return ckv.KillingPair(omega=cfg["rotation.omega"], axis=cfg["rotation.axis"])


def make_seed(cfg, geom, pair):
    """Build the seed mesh; returns (mesh, min_u, min_uperp)."""
    kind, level = cfg["seed.kind"], cfg["seed.level"]
    if kind == "sphere":
        mesh = surface.sphere_seed(cfg["seed.radius"], level)
    elif kind == "ellipsoid":
        mesh = surface.ellipsoid_seed(cfg["seed.semiaxes"], level)
    else:
        return surface.twisted_seed(
            geom, pair, cfg["seed.semiaxes"], cfg["seed.twist"], level
        )
    vg = surface.mesh_geometry(mesh, geom, pair, xi_now=1.0, with_curvatures=False)
    return mesh, float(np.min(vg.u)), float(np.min(vg.u_perp))


def shell_bounds(cfg, geom):
    """Leaf-label band covering the seed with padding for flow excursions.

    The twist preserves radii, so the untwisted base surface gives the
    correct band for every seed kind.
    """
    kind, level = cfg["seed.kind"], min(cfg["seed.level"], 3)
    if kind == "sphere":
        base = surface.sphere_seed(cfg["seed.radius"], level)
    else:
        base = surface.ellipsoid_seed(cfg["seed.semiaxes"], level)
    lam_v = ckv.lam(geom, base.vertices)
    lo, hi = 0.75 * float(np.min(lam_v)), 1.3 * float(np.max(lam_v))
    r_out = float(geom.outer_distance(np.zeros((1, 3)))[0])
    if np.isfinite(r_out):
        hi = min(hi, float(ckv.lam(geom, np.array([0.98 * r_out, 0.0, 0.0]))))
    return lo, hi


def make_ctrl(cfg):
    return flow.StepControl(
        cfl=cfg["flow.cfl"],
        t_end=cfg["flow.t_end"],
        speed_tol=cfg["flow.speed_tol"],
        leaf_tol=cfg["flow.leaf_tol"],
        smooth_every=cfg["flow.smooth_every"],
        max_steps=cfg["flow.max_steps"],
    )


def make_schedule(cfg, geom, pair, lam_lo, lam_hi):
    margin = cfg["schedule.margin"]
    t0 = cfg["schedule.t0"]
    if t0 == "auto":
        t0 = ckv.estimate_T0(geom, pair, lam_lo, lam_hi, margin=margin,
                             seed=cfg["sampling.seed"])
    return ckv.Schedule(t0=t0, margin=margin)


def cmd_run(cfg, out, force, quiet):
    geom, pair = make_geometry(cfg), make_pair(cfg)
    lam_lo, lam_hi = shell_bounds(cfg, geom)
    report = ckv.verify_assumptions(geom, pair, lam_lo, lam_hi,
                                    seed=cfg["sampling.seed"])
    if not quiet:
        print(report.table())
    if not report.ok and not force:
        print("assumption check failed; rerun with --force to override",
              file=sys.stderr)
        return _status("assumptions")
    schedule = make_schedule(cfg, geom, pair, lam_lo, lam_hi)
    mesh, min_u, min_uperp = make_seed(cfg, geom, pair)
    if not quiet:
        print(f"seed: min u(0) = {min_u:.6g}, min uperp = {min_uperp:.6g}, "
              f"T0 = {schedule.t0:.6g}")
    ctrl = make_ctrl(cfg)
    frame_every = cfg["output.frame_every"]

    def frame_cb(k, t, m):
        surface.save_obj(m, os.path.join(out, f"frame_{k}.obj"), t=t, frame=k)

    try:
        if cfg["flow.backend"] == "lagrangian":
            res = flow.run(geom, pair, mesh, schedule, ctrl,
                           frame_every=frame_every, frame_cb=frame_cb)
        else:
            state0 = flow.graph_state_from_mesh(mesh, geom)
            res = flow.run_graph(geom, pair, state0, schedule, ctrl,
                                 frame_every=frame_every, frame_cb=frame_cb)
    except (StarshapeLost, MeshDegenerate, DomainExit) as err:
        trace = getattr(err, "trace", None)
        if trace is not None and len(trace):
            trace.write_csv(os.path.join(out, "trace.csv"))
        print(f"flow error: {err}", file=sys.stderr)
        return _status("flow")

    res.trace.write_csv(os.path.join(out, "trace.csv"))
    verdict = diagnostics.isoperimetric_check(
        geom, res.mesh_initial, res.mesh, res.converged
    )
    verdict.write_txt(os.path.join(out, "verdict.txt"))
    if not quiet:
        print(f"{'converged' if res.converged else res.reason}: t = {res.t:.6g}, "
              f"steps = {res.steps}, "
              f"area {verdict.area_initial:.6g} -> {verdict.area_final:.6g}, "
              f"leaf area = {verdict.area_leaf_equal_volume:.6g}")
    if not res.converged:
        print(f"no convergence by t={res.t:.6g} ({res.reason})", file=sys.stderr)
        return _status("nonconv")
    return _status("ok")


def cmd_verify(cfg, out, force, quiet):
    geom, pair = make_geometry(cfg), make_pair(cfg)
    lam_lo, lam_hi = shell_bounds(cfg, geom)
    report = ckv.verify_assumptions(geom, pair, lam_lo, lam_hi,
                                    seed=cfg["sampling.seed"])
    print(report.table())
    return _status("ok" if report.ok else "assumptions")


def cmd_profile(cfg, out, force, quiet):
    geom = make_geometry(cfg)
    lam_lo, lam_hi = shell_bounds(cfg, geom)
    r_lo = float(geom.r_of_lambda(lam_lo))
    r_hi = float(geom.r_of_lambda(lam_hi))
    profile = diagnostics.leaf_profile(geom, r_lo, r_hi)
    path = os.path.join(out, "profile.csv")
    profile.write_csv(path)
    if not quiet:
        print(f"wrote {path}: {len(profile.r)} rows, "
              f"r in [{r_lo:.4g}, {r_hi:.4g}]")
    return _status("ok")


def cmd_seed(cfg, out, force, quiet):
    geom, pair = make_geometry(cfg), make_pair(cfg)
    mesh, min_u, min_uperp = make_seed(cfg, geom, pair)
    path = os.path.join(out, "seed.obj")
    surface.save_obj(mesh, path, t=0.0, frame=0)
    print(f"min_u0 = {min_u:.9g}")
    print(f"min_uperp = {min_uperp:.9g}")
    if not quiet:
        print(f"wrote {path}: {mesh.n_vertices} vertices, "
              f"{mesh.faces.shape[0]} faces")
    return _status("ok")


COMMANDS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "profile": cmd_profile,
    "seed": cmd_seed,
}


def main(argv=None):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run file path")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--force", action="store_true",
                        help="continue past a failed assumption check")
    common.add_argument("--quiet", action="store_true",
                        help="suppress progress chatter on stdout")
    parser = argparse.ArgumentParser(
        prog="ckflow",
        description="conformally induced curvature flow on closed surfaces",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)
    sub.add_parser("run", parents=[common],
                   help="verify, schedule, integrate, export artifacts")
    sub.add_parser("verify", parents=[common],
                   help="check the structural conditions on the shell")
    sub.add_parser("profile", parents=[common],
                   help="tabulate leaf area/volume against radius")
    sub.add_parser("seed", parents=[common],
                   help="generate the seed surface and report support minima")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return _status("config")
    try:
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.cmd](cfg, args.out, args.force, args.quiet)
    except (ScheduleInfeasible,) as err:
        print(f"schedule infeasible: {err}", file=sys.stderr)
        return _status("assumptions")
    except (SeedInfeasible, StarshapeLost) as err:
        print(f"starshape violation: {err}", file=sys.stderr)
        return _status("flow")
    except (MeshDegenerate, DomainExit) as err:
        print(f"flow error: {err}", file=sys.stderr)
        return _status("flow")
    except NonConvergence as err:
        print(f"non-convergence: {err}", file=sys.stderr)
        return _status("nonconv")
    except ProfileNotMonotone as err:
        print(f"profile error: {err}", file=sys.stderr)
        return _status("flow")


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: run, solve, oracle, scan, probe, diff."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .berman import ContinuationSchedule, NewtonParams, continuation_solve, extract_envelope
from .estimates import c11_probe, estimate_scan, oracle_compare
from .grid import XField, build_grid
from .io import load_field, save_field, write_json
from .obstacle import solve_obstacle
from .oracle import geodesic_field
from .presets import PRESET_NAMES, make_preset, restore_affine
from .runner import RunConfig, run


def _parse_grid(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 2:   # NX,NT: square torus grid
        return parts[0], parts[0], parts[1]
    if len(parts) == 3:
        return parts[0], parts[1], parts[2]
    raise argparse.ArgumentTypeError("grid must be NX,NT or NX1,NX2,NT")


def _add_common(p):
    p.add_argument("--preset", required=True, choices=PRESET_NAMES)
    p.add_argument("--grid", type=_parse_grid, default=None, metavar="NX,NT")
    p.add_argument("--eps-levels", type=int, default=2)
    p.add_argument("--eps-start", type=float, default=2.0 ** -5)
    p.add_argument("--beta-min", type=float, default=16.0)
    p.add_argument("--beta-max", type=float, default=2.0 ** 14)
    p.add_argument("--out", default="runs/out")


def _config_from_args(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    for key in ("preset", "grid", "eps_levels", "eps_start", "beta_min", "beta_max",
                "out", "mask_radius", "write_csv"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="envlab",
        description="Plurisubharmonic envelopes and geodesics on the torus-annulus model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full pipeline: build, obstacle, solve, extract, scan")
    p_run.add_argument("--config", default=None, help="JSON config; flags override")
    _add_common(p_run)
    p_run.add_argument("--mask-radius", dest="mask_radius", type=int, default=None)
    p_run.add_argument("--write-csv", dest="write_csv", action="store_true", default=None)

    p_solve = sub.add_parser("solve", help="continuation solve, emit fields and reports")
    _add_common(p_solve)

    p_oracle = sub.add_parser("oracle", help="reduction oracle field for an x1-only preset")
    _add_common(p_oracle)

    p_scan = sub.add_parser("scan", help="re-run the estimate scan on a finished run dir")
    p_scan.add_argument("--run", required=True)
    p_scan.add_argument("--b-ladder", default="1,2,4,8")
    p_scan.add_argument("--mask-radius", type=int, default=4)

    p_probe = sub.add_parser("probe", help="C^{1,1} probe across one refinement")
    _add_common(p_probe)

    p_diff = sub.add_parser("diff", help="compare two saved fields")
    p_diff.add_argument("--a", required=True)
    p_diff.add_argument("--b", required=True)

    args = parser.parse_args(argv)

    if args.command == "run":
        manifest = run(_config_from_args(args))
        print(f"status: {manifest.status}")
        for v in manifest.violations:
            print(f"violation: {v}")
        return 0 if manifest.status == "COMPLETE" else 1

    if args.command in ("solve", "oracle", "probe"):
        cfg = _config_from_args(args)
        grid = (build_grid(*cfg.grid, offset=True) if cfg.grid else None)
        bundle = make_preset(cfg.preset, grid)

        if args.command == "oracle":
            if not bundle.x1_only:
                print("preset is not x1-only; no reduction oracle", file=sys.stderr)
                return 1
            mode = "hull" if bundle.hull_oracle else "reject"
            raw0 = XField(bundle.grid, bundle.phi0.values + bundle.d0)
            raw1 = XField(bundle.grid, bundle.phi1.values + bundle.d1)
            f = geodesic_field(bundle.grid, raw0, raw1, nonconvex=mode)
            out = Path(cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            save_field(f, out / "V_oracle")
            print(f"wrote {out / 'V_oracle'}.bin")
            return 0

        if args.command == "probe":
            man_c = run(cfg)
            fine = bundle.grid.refine()
            cfg2 = RunConfig.from_dict({**cfg.to_dict(),
                                        "grid": [fine.nx1, fine.nx2, fine.nt],
                                        "out": str(Path(cfg.out) / "refined")})
            man_f = run(cfg2)
            if man_c.status == "INCOMPLETE" or man_f.status == "INCOMPLETE":
                print("probe runs incomplete", file=sys.stderr)
                return 1
            vc = load_field(Path(cfg.out) / "fields" / "V_num")
            vf = load_field(Path(cfg.out) / "refined" / "fields" / "V_num")
            rep = c11_probe(vc, vf, model=bundle.model)
            write_json(rep, Path(cfg.out) / "reports" / "c11_probe.json")
            for k, v in rep.items():
                print(f"{k}: {v:.6g}")
            return 0

        # solve: pipeline minus oracle/scan
        family = bundle.build_family(cfg.eps_list())
        obstacles = {e: solve_obstacle(family, e) for e in cfg.eps_list()}
        schedule = ContinuationSchedule(cfg.eps_list(), cfg.beta_list(),
                                        NewtonParams(tol_residual_sup=cfg.tol_residual_sup))
        result = continuation_solve(schedule, family, obstacles)
        out = Path(cfg.out)
        (out / "fields").mkdir(parents=True, exist_ok=True)
        (out / "reports").mkdir(parents=True, exist_ok=True)
        bad = 0
        for rep in result.reports:
            tag = f"u_eps_{rep.eps:g}_beta_{rep.beta:g}"
            save_field(rep.u, out / "fields" / tag)
            write_json(rep.summary(), out / "reports" / f"{tag}.json")
            bad += not (rep.converged and rep.sandwich_ok and rep.trace_bound_ok)
        env = extract_envelope(result)
        save_field(restore_affine(bundle, env.field), out / "fields" / "V_num")
        print(f"{len(result.reports)} reports, {bad} flagged")
        return 1 if bad else 0

    if args.command == "scan":
        run_dir = Path(args.run)
        ladder = tuple(float(x) for x in args.b_ladder.split(","))
        import re

        from .berman import SolveReport
        reports = []
        bundle = None
        manifest = json.loads((run_dir / "manifest.json").read_text())
        grid = build_grid(*manifest["grid"], offset=True)
        bundle = make_preset(manifest["preset"], grid)
        for p in sorted((run_dir / "fields").glob("u_eps_*_beta_*.json")):
            m = re.match(r"u_eps_(.*)_beta_(.*)", p.stem)
            summ = json.loads((run_dir / "reports" / f"{p.stem}.json").read_text())
            reports.append(SolveReport(
                eps=float(m.group(1)), beta=float(m.group(2)), u=load_field(p.with_suffix("")),
                newton_iters=summ["newton_iters"], residual_sup=summ["residual_sup"],
                min_eigen_path=[], sandwich_ok=summ["sandwich_ok"],
                trace_bound_ok=summ["trace_bound_ok"], converged=summ["converged"]))
        scan = estimate_scan(reports, bundle.model, B_ladder=ladder,
                             mask_radius=args.mask_radius, require_flags=False)
        write_json({"entries": [vars(e) for e in scan.entries],
                    "verdicts": {str(b): v for b, v in scan.verdicts.items()}},
                   run_dir / "reports" / "estimates_rescan.json")
        for b, d in scan.verdicts.items():
            print(f"B={b}: " + ", ".join(f"{k}={v['verdict']}" for k, v in d.items()))
        return 0

    if args.command == "diff":
        fa = load_field(Path(args.a))
        fb = load_field(Path(args.b))
        rep = oracle_compare(fa, fb)
        for k, v in rep.items():
            print(f"{k}: {v:.6e}")
        return 0

    return 2


if __name__ == "__main__":
    raise SystemExit(main())

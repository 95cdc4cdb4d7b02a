"""End-to-end orchestration: build, obstacles, continuation, extraction, scans.

A run persists every emitted artifact under an output directory
(``fields/`` and ``reports/``) together with a ``manifest.json`` carrying
content hashes, configuration, timings and the violation list.  Runs are
deterministic: identical configuration yields identical emitted bytes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .berman import ContinuationSchedule, NewtonParams, continuation_solve, extract_envelope
from .estimates import estimate_scan, oracle_compare
from .grid import build_grid
from .io import field_to_csv, save_field, sha256_file, write_json
from .obstacle import solve_obstacle
from .oracle import geodesic_field
from .presets import make_preset, restore_affine

__all__ = ["RunConfig", "RunManifest", "run"]


@dataclass
class RunConfig:
    preset: str
    grid: tuple[int, int, int] | None = None
    offset: bool = True
    eps_levels: int = 2
    eps_start: float = 2.0 ** -5
    beta_min: float = 16.0
    beta_max: float = 2.0 ** 14
    tol_residual_sup: float = 1e-9
    mask_radius: int = 4
    b_ladder: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    out: str = "runs/out"
    write_csv: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls(preset=d["preset"])
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise KeyError(f"unknown config key {k!r}")
            if k == "grid" and v is not None:
                v = tuple(int(x) for x in v)
            if k == "b_ladder":
                v = tuple(float(x) for x in v)
            setattr(cfg, k, v)
        return cfg

    def eps_list(self) -> list[float]:
        return [self.eps_start * 2.0 ** -i for i in range(self.eps_levels)]

    def beta_list(self) -> list[float]:
        betas = []
        b = self.beta_min
        while b < self.beta_max * (1 + 1e-12):
            betas.append(b)
            b *= 2.0
        return betas

    def to_dict(self) -> dict:
        return {
            "preset": self.preset, "grid": self.grid, "offset": self.offset,
            "eps_levels": self.eps_levels, "eps_start": self.eps_start,
            "beta_min": self.beta_min, "beta_max": self.beta_max,
            "tol_residual_sup": self.tol_residual_sup, "mask_radius": self.mask_radius,
            "b_ladder": list(self.b_ladder), "out": self.out, "write_csv": self.write_csv,
        }


@dataclass
class RunManifest:
    preset: str
    grid: tuple[int, int, int]
    schedule: dict
    tool_version: str
    status: str = "INCOMPLETE"
    violations: list[str] = dc_field(default_factory=list)
    wall_times: dict = dc_field(default_factory=dict)
    hashes: dict = dc_field(default_factory=dict)
    summary: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "preset": self.preset, "grid": list(self.grid), "schedule": self.schedule,
            "tool_version": self.tool_version, "status": self.status,
            "violations": self.violations, "wall_times": self.wall_times,
            "hashes": self.hashes, "summary": self.summary,
        }


def run(config: RunConfig) -> RunManifest:
    out = Path(config.out)
    fields_dir = out / "fields"
    reports_dir = out / "reports"
    fields_dir.mkdir(parents=True, exist_ok=True)
    reports_dir.mkdir(parents=True, exist_ok=True)

    grid_spec = config.grid or None
    bundle = make_preset(config.preset) if grid_spec is None else make_preset(
        config.preset, build_grid(*grid_spec, offset=config.offset))
    grid = bundle.grid
    eps_list = config.eps_list()
    beta_list = config.beta_list()
    schedule = ContinuationSchedule(
        eps_list=eps_list, beta_list=beta_list,
        newton=NewtonParams(tol_residual_sup=config.tol_residual_sup),
    )
    manifest = RunManifest(
        preset=config.preset, grid=grid.shape,
        schedule={"eps_list": eps_list, "beta_list": beta_list,
                  "tol_residual_sup": config.tol_residual_sup},
        tool_version=__version__,
    )

    def emit_field(name, f):
        b, h = save_field(f, fields_dir / name)
        manifest.hashes[str(b.relative_to(out))] = sha256_file(b)
        manifest.hashes[str(h.relative_to(out))] = sha256_file(h)
        if config.write_csv:
            c = field_to_csv(f, fields_dir / f"{name}.csv")
            manifest.hashes[str(c.relative_to(out))] = sha256_file(c)

    def emit_report(name, obj):
        p = write_json(obj, reports_dir / f"{name}.json")
        manifest.hashes[str(p.relative_to(out))] = sha256_file(p)

    def stage(name):
        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.wall_times[name] = time.perf_counter() - self.t0
                return False
        return _T()

    try:
        with stage("build"):
            family = bundle.build_family(eps_list)
            emit_field("phi", family.phi)
            for eps in eps_list:
                emit_field(f"phi_eps_{eps:g}", family.phi_eps(eps))
            emit_report("family", family.records)

        with stage("obstacle"):
            obstacles = {eps: solve_obstacle(family, eps) for eps in eps_list}
            for eps, sol in obstacles.items():
                emit_field(f"h_eps_{eps:g}", sol.h)
                margin = sol.above_data_margin()
                if margin is not None and margin < -1e-9:
                    manifest.violations.append(f"obstacle below data at eps={eps}: {margin:.2e}")

        with stage("continuation"):
            result = continuation_solve(schedule, family, obstacles)
            for rep in result.reports:
                tag = f"u_eps_{rep.eps:g}_beta_{rep.beta:g}"
                emit_field(tag, rep.u)
                emit_report(tag, rep.summary())
                if not rep.converged:
                    manifest.violations.append(
                        f"not converged at (eps={rep.eps}, beta={rep.beta})")
                if not rep.sandwich_ok:
                    manifest.violations.append(
                        f"sandwich violated at (eps={rep.eps}, beta={rep.beta}): "
                        f"lower {rep.sandwich_lower_gap:.2e} upper {rep.sandwich_upper_gap:.2e}")
                if not rep.trace_bound_ok:
                    manifest.violations.append(
                        f"trace bound violated at (eps={rep.eps}, beta={rep.beta}): "
                        f"{rep.trace_min:.6f}")
            emit_report("beta_cauchy", {str(k): v for k, v in result.beta_cauchy.items()})
            for eps, why in result.aborted.items():
                manifest.violations.append(f"branch eps={eps} aborted: {why}")

        with stage("extract"):
            env = extract_envelope(result)
            v_num = restore_affine(bundle, env.field)
            emit_field("V_num", v_num)
            emit_report("envelope", {
                "eps": env.eps, "beta": env.beta,
                "uncertainty": None if math.isinf(env.uncertainty) else env.uncertainty,
                "uncertainty_degenerate": env.degenerate,
            })
            manifest.summary["envelope"] = {"eps": env.eps, "beta": env.beta}

        if bundle.x1_only:
            with stage("oracle"):
                mode = "hull" if bundle.hull_oracle else "reject"
                raw0 = bundle.phi0.values + bundle.d0
                raw1 = bundle.phi1.values + bundle.d1
                from .grid import XField
                v_oracle = geodesic_field(
                    grid, XField(grid, raw0), XField(grid, raw1), nonconvex=mode)
                emit_field("V_oracle", v_oracle)
                cmp_res = oracle_compare(v_num, v_oracle)
                emit_report("oracle_compare", cmp_res)
                manifest.summary["oracle_compare"] = cmp_res

        with stage("scan"):
            good = [r for r in result.reports
                    if r.converged and r.sandwich_ok and r.trace_bound_ok]
            if len({r.beta for r in good}) < 2 or not good:
                raise RuntimeError(
                    "estimate scan needs at least two converged beta levels "
                    "with clean invariant flags")
            scan = estimate_scan(good, bundle.model, B_ladder=config.b_ladder,
                                 mask_radius=config.mask_radius)
            emit_report("estimates", {
                "entries": [vars(e) for e in scan.entries],
                "verdicts": {str(b): v for b, v in scan.verdicts.items()},
            })
            manifest.summary["verdicts"] = {str(b): {k: v["verdict"] for k, v in d.items()}
                                            for b, d in scan.verdicts.items()}

        manifest.status = "COMPLETE" if not manifest.violations else "COMPLETE_WITH_VIOLATIONS"
    except Exception as exc:  # partial failure preserves completed artifacts
        manifest.status = "INCOMPLETE"
        manifest.violations.append(f"stage failure: {exc}")

    write_json(manifest.to_dict(), out / "manifest.json")
    return manifest

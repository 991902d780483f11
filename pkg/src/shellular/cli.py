"""Command-line entry point: ``shellular <subcommand> [options]``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DegenerateDesignError, ShellularError, ValidationError
from .fem import TIMING_KEYS, BaseMaterial, homogenize, homogenize_mesh
from .field import DesignParams, random_design, sample_grid, uniform_alpha
from .voxel import ShellParams, VoxelMesh, build_reduced_mesh

log = logging.getLogger("shellular")

EXIT_OK, EXIT_FAIL, EXIT_VALIDATION, EXIT_DEGENERATE, EXIT_IO = 0, 1, 2, 3, 4

SYMMETRY_ALIASES = {"none": "none", "cubic": "cubic_octant", "cubic_octant": "cubic_octant",
                    "tet": "tetrahedral", "tetrahedral": "tetrahedral"}


@dataclass
class RunConfig:
    resolution: int = 32
    shell: ShellParams = field(default_factory=ShellParams)
    material: BaseMaterial = field(default_factory=BaseMaterial)
    seed: int = 0
    out: Path = Path("shellular_out")
    threads: int = 0

    def __post_init__(self):
        if not 8 <= self.resolution <= 256:
            raise ValidationError(f"resolution must lie in [8, 256], got {self.resolution}")
        if self.threads < 0:
            raise ValidationError("thread count must be >= 0")


class Run:
    """Output directory bookkeeping plus the manifest written at the end."""

    def __init__(self, cfg: RunConfig, command: str, args: argparse.Namespace):
        self.cfg = cfg
        self.command = command
        self.args = args
        self.outputs: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        try:
            cfg.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {cfg.out}: {exc}") from exc

    def path(self, name: str) -> Path:
        if Path(name).name != name:
            raise ValidationError(f"output name must be a bare file name: {name!r}")
        return self.cfg.out / name

    def write_bytes(self, name: str, data: bytes) -> Path:
        p = self.path(name)
        p.write_bytes(data)
        self.outputs[name] = hashlib.sha256(data).hexdigest()
        return p

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode())

    def write_json(self, name: str, doc) -> Path:
        return self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def manifest(self) -> dict:
        import scipy

        args = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items()
                if k != "func"}
        return {
            "command": self.command,
            "arguments": args,
            "seed": self.cfg.seed,
            "resolution": self.cfg.resolution,
            "shell": {"sharpness": self.cfg.shell.sharpness, "floor": self.cfg.shell.floor,
                      "expand_layers": self.cfg.shell.expand_layers},
            "material": {"youngs": self.cfg.material.youngs, "poisson": self.cfg.material.poisson},
            "versions": {"shellular": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "threads": self.cfg.threads,
            "timings_ms": self.timings,
            "outputs": self.outputs,
            "nondeterministic_fields": ["timings_ms", "outputs[manifest]"],
            **self.extra,
        }

    def finish(self):
        p = self.path("manifest.json")
        p.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")


def timing_line(timings: dict) -> str:
    keys = [k for k in TIMING_KEYS if k in timings] + sorted(k for k in timings if k not in TIMING_KEYS)
    return " ".join(f"{k}={timings[k]:.2f}ms" for k in keys)


def resolve_threads(requested: int) -> int:
    if requested <= 0:
        env = os.environ.get("SHELL_THREADS")
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise ValidationError(f"SHELL_THREADS must be an integer, got {env!r}") from None
    if requested <= 0:
        try:
            import psutil

            requested = psutil.cpu_count(logical=False) or os.cpu_count() or 1
        except ImportError:
            requested = os.cpu_count() or 1
    return requested


# ---------------------------------------------------------------------------
# design loading

def parse_random_spec(text: str) -> tuple[str, int, int]:
    """``sym:n[:K]`` such as ``cubic:2`` or ``none:8:3``."""
    parts = text.split(":")
    if len(parts) not in (2, 3) or parts[0] not in SYMMETRY_ALIASES:
        raise ValidationError(f"random spec must look like cubic:2 or none:8:2, got {text!r}")
    try:
        n = int(parts[1])
        K = int(parts[2]) if len(parts) == 3 else 2
    except ValueError:
        raise ValidationError(f"bad numbers in random spec {text!r}") from None
    return SYMMETRY_ALIASES[parts[0]], n, K


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def load_design(args, cfg: RunConfig) -> DesignParams:
    if getattr(args, "design", None):
        return DesignParams.from_dict(read_json(args.design))
    if getattr(args, "random", None):
        sym, n, K = parse_random_spec(args.random)
        return random_design(sym, n, K, seed=cfg.seed)
    raise ValidationError("pass --design <json> or --random <sym:n>")


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args, run: Run):
    from .geomio import export_mesh, extract_isosurface, obj_text, stl_bytes

    cfg = run.cfg
    params = load_design(args, cfg)
    t0 = time.perf_counter()
    grid = sample_grid(params, cfg.resolution)
    if grid.degenerate:
        raise DegenerateDesignError("field is identically zero", stage="field")
    t1 = time.perf_counter()
    mesh = build_reduced_mesh(grid, cfg.shell)
    t2 = time.perf_counter()
    groups = mesh.periodic_groups
    t3 = time.perf_counter()
    surface = extract_isosurface(grid)
    t4 = time.perf_counter()
    run.timings.update({"t_field": 1e3 * (t1 - t0), "t_mesh": 1e3 * (t2 - t1),
                        "t_PBC": 1e3 * (t3 - t2), "t_iso": 1e3 * (t4 - t3)})
    run.write_json("design.json", params.to_dict())
    run.write_bytes("field.raw", np.ascontiguousarray(grid.samples.transpose(2, 1, 0), dtype="<f4").tobytes())
    run.write_bytes("occupancy.raw", mesh.occupancy_bytes())
    run.write_text("isosurface.obj", obj_text(surface))
    run.write_bytes("isosurface.stl", stl_bytes(surface))
    sizes = np.bincount([1 + len(g.slaves) for g in groups], minlength=9)
    run.write_json("mesh_stats.json", {
        "resolution": cfg.resolution, "n_elements": mesh.n_elements, "fraction": mesh.fraction,
        "surface_elements": mesh.surface_count, "layers": mesh.layers,
        "volume_ratio": mesh.volume_ratio, "n_nodes": len(mesh.nodes),
        "periodic_groups": {"face": int(sizes[2]), "edge": int(sizes[4]), "corner": int(sizes[8])},
        "field_norm": grid.norm, "triangles": surface.n_triangles, **mesh.diagnostics,
    })
    print(timing_line(run.timings))


def _solid_mesh(r: int) -> VoxelMesh:
    elements = np.argwhere(np.ones((r, r, r), dtype=bool))
    return VoxelMesh(r, elements, np.ones(len(elements)), 1e-3, full_grid=True)


def cmd_homog(args, run: Run):
    from .props import property_report

    cfg = run.cfg
    if args.solid:
        t0 = time.perf_counter()
        tensor, system, mesh = homogenize_mesh(_solid_mesh(cfg.resolution), cfg.material)
        timings = {k: system.timings[k] for k in ("t_PBC", "t_AS", "t_RHS", "t_solve", "t_C")}
        timings["t_fwd"] = 1e3 * (time.perf_counter() - t0)
        c, V = tensor.c, 1.0
        doc = {"C": c.tolist(), "resolution": cfg.resolution, "volume_ratio": 1.0, "solid": True}
    else:
        params = load_design(args, cfg)
        res = homogenize(params, cfg.shell, cfg.material, cfg.resolution, full=args.full)
        timings, c, V = res.timings, res.tensor.c, res.volume_ratio
        # timings live in the manifest so tensor.json stays byte-reproducible
        doc = {k: v for k, v in res.tensor.to_dict().items() if k != "timings_ms"}
    run.timings.update(timings)
    report = property_report(c, V, cfg.material)
    run.write_json("tensor.json", doc)
    run.write_text("report.csv", report.to_csv())
    run.write_json("report.json", report.to_dict())
    print(timing_line(timings))
    print(f"K_eff/K_HS={report.K_ratio:.4f} G_eff/G_HS={report.G_ratio:.4f} "
          f"E_max/E_voigt={report.E_ratio:.4f} V={V:.4f}")


def _plan_from_args(args):
    from .design import DEFAULT_PLAN, PlanEntry

    if args.spec:
        doc = read_json(args.spec)
        entries = doc["plan"] if isinstance(doc, dict) else doc
        plan = []
        for e in entries:
            e = dict(e)
            e["symmetry"] = SYMMETRY_ALIASES.get(e.get("symmetry"), e.get("symmetry"))
            if "weight_range" in e:
                e["weight_range"] = tuple(e["weight_range"])
            try:
                plan.append(PlanEntry(**e))
            except TypeError as exc:
                raise ValidationError(f"bad plan entry {e}: {exc}") from None
        return plan
    if args.samples is None:
        return list(DEFAULT_PLAN)
    return [PlanEntry(p.symmetry, p.n_charges, args.samples, p.K) for p in DEFAULT_PLAN]


def cmd_sample(args, run: Run):
    from .design import sample_campaign

    cfg = run.cfg
    plan = _plan_from_args(args)
    t0 = time.perf_counter()
    res = sample_campaign(plan, cfg.seed, r=cfg.resolution, shell=cfg.shell, material=cfg.material)
    run.timings["t_campaign"] = 1e3 * (time.perf_counter() - t0)
    run.write_text("campaign.csv", res.to_csv())
    run.write_json("skipped.json", res.skipped)
    run.extra["counts"] = {"total": res.total, "rows": len(res.rows), "skipped": len(res.skipped)}
    print(f"designs={res.total} rows={len(res.rows)} skipped={len(res.skipped)}")


def _objective_from_args(args, cfg: RunConfig):
    from .design import ObjectiveSpec

    if args.objective_json:
        doc = read_json(args.objective_json)
        doc.setdefault("r", cfg.resolution)
        return ObjectiveSpec.from_dict(doc)
    return ObjectiveSpec(args.objective, axis=args.axis, gamma=args.gamma, entry=args.entry,
                         target=args.target, r=cfg.resolution, shell=cfg.shell, material=cfg.material)


def cmd_optimize(args, run: Run):
    from .design import OptimizerConfig, cma_es_optimize, evaluate_objective

    cfg = run.cfg
    spec = _objective_from_args(args, cfg)
    sym = SYMMETRY_ALIASES.get(args.symmetry)
    if sym is None:
        raise ValidationError(f"unknown symmetry {args.symmetry!r}")
    opt = OptimizerConfig(population=args.population, sigma0=args.sigma0, max_evals=args.evals,
                          seed=cfg.seed, symmetry=sym, n_charges=args.charges, K=args.K,
                          target=args.stop_at, workers=max(1, args.workers))
    init = DesignParams.from_dict(read_json(args.design)) if args.design else None
    t0 = time.perf_counter()
    result = cma_es_optimize(spec, opt, init=init)
    run.timings["t_optimize"] = 1e3 * (time.perf_counter() - t0)
    run.write_text("trace.csv", result.trace_csv())
    run.write_json("best_design.json", result.best.to_dict())
    summary = {"objective": spec.to_dict(), "best_energy": result.best_energy, "evals": result.evals,
               "stop_reason": result.stop_reason,
               "report": result.best_evaluation.report.to_dict() if result.best_evaluation.report else None}
    if args.reeval_r:
        from dataclasses import replace

        final = evaluate_objective(replace(spec, r=args.reeval_r), result.best)
        summary["reevaluation"] = {"r": args.reeval_r, "energy": final.energy,
                                   "report": final.report.to_dict() if final.report else None,
                                   "diagnostic": final.diagnostic}
    run.write_json("best_report.json", summary)
    print(f"best={result.best_energy:.6g} evals={result.evals} stop={result.stop_reason}")


def cmd_fit(args, run: Run):
    from .design import TARGETS, FitProblem, fit_distances, fit_surface

    cfg = run.cfg
    if args.target not in TARGETS:
        raise ValidationError(f"unknown target {args.target!r}; choose from {sorted(TARGETS)}")
    target = TARGETS[args.target]()
    problem = FitProblem.from_target(target, args.n_on, args.n_off, d=args.offset, seed=cfg.seed,
                                     lam=args.lam, lr=args.lr, iterations=args.iters)
    sym = SYMMETRY_ALIASES.get(args.symmetry)
    if sym is None:
        raise ValidationError(f"unknown symmetry {args.symmetry!r}")
    init = (DesignParams.from_dict(read_json(args.design)) if args.design
            else random_design(sym, args.charges, args.K, seed=cfg.seed))
    t0 = time.perf_counter()
    result = fit_surface(problem, init)
    run.timings["t_fit"] = 1e3 * (time.perf_counter() - t0)
    distances = fit_distances(result.params, problem.on_points, r=cfg.resolution)
    run.write_json("fitted_design.json", result.params.to_dict())
    run.write_text("fit_history.csv", "iteration,energy\n"
                   + "".join(f"{i},{e!r}\n" for i, e in enumerate(result.history)))
    run.write_json("distance_report.json", {
        "target": args.target, "iterations": result.iterations, "energy": result.energy,
        "initial_energy": result.initial_energy, "diverged": result.diverged, **distances})
    print(f"average={distances['average']:.5f} hausdorff={distances['hausdorff']:.5f}")


def cmd_export(args, run: Run):
    from .geomio import export_solid_voxels, extract_isosurface, obj_text, stl_bytes

    cfg = run.cfg
    params = load_design(args, cfg)
    grid = sample_grid(params, cfg.resolution)
    if grid.degenerate:
        raise DegenerateDesignError("field is identically zero", stage="field")
    if args.voxels is not None:
        mesh = export_solid_voxels(grid, cfg.shell, args.voxels)
        stem = "voxels"
    else:
        mesh = extract_isosurface(grid)
        stem = "isosurface"
    if args.format == "stl":
        run.write_bytes(f"{stem}.stl", stl_bytes(mesh))
    else:
        run.write_text(f"{stem}.obj", obj_text(mesh))
    print(f"triangles={mesh.n_triangles}")


def cmd_tile(args, run: Run):
    from .geomio import TileSpec, stl_bytes, tile_mesh

    cfg = run.cfg
    spec = TileSpec.from_dict(read_json(args.spec))
    if args.n:
        spec = spec.repeated(args.n)
    t0 = time.perf_counter()
    mesh = tile_mesh(spec, cfg.resolution)
    run.timings["t_tile"] = 1e3 * (time.perf_counter() - t0)
    run.write_bytes("tiled.stl", stl_bytes(mesh))
    print(f"blocks={spec.n}^3 triangles={mesh.n_triangles}")


def cmd_bench(args, run: Run):
    cfg = run.cfg
    params = load_design(args, cfg) if (args.design or args.random) else random_design("cubic_octant", 2, 2, seed=cfg.seed)
    rows = ["r," + ",".join(TIMING_KEYS) + ",n_elements,fraction,n_free_dofs"]
    for r in args.sizes:
        res = homogenize(params, cfg.shell, cfg.material, r)
        t = res.timings
        rows.append(f"{r}," + ",".join(f"{t[k]:.3f}" for k in TIMING_KEYS)
                    + f",{res.mesh.n_elements},{res.mesh.fraction:.6f},{res.system.n_free_dofs}")
        print(f"r={r} " + timing_line(t))
    run.write_text("bench.csv", "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-r", "--resolution", type=int, default=32)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=0, help="0 = SHELL_THREADS or physical cores")
    common.add_argument("--out", type=Path, default=Path("shellular_out"))
    common.add_argument("--sharpness", type=float, default=500.0)
    common.add_argument("--floor", type=float, default=1e-3)
    common.add_argument("--layers", type=int, default=None)
    common.add_argument("--youngs", type=float, default=1.0)
    common.add_argument("--poisson", type=float, default=0.3)
    common.add_argument("-v", "--verbose", action="store_true")

    design = argparse.ArgumentParser(add_help=False)
    design.add_argument("--design", type=Path, help="design JSON")
    design.add_argument("--random", help="random design, e.g. cubic:2, tet:2, none:8[:K]")

    parser = argparse.ArgumentParser(prog="shellular", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common, design], help="field, reduced mesh and isosurface")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("homog", parents=[common, design], help="effective tensor and property report")
    p.add_argument("--solid", action="store_true", help="homogenize a full solid cell (debug fixture)")
    p.add_argument("--full", action="store_true", help="use every voxel instead of the reduced band")
    p.set_defaults(func=cmd_homog)

    p = sub.add_parser("sample", parents=[common], help="random sampling campaign")
    p.add_argument("--spec", type=Path, help="plan JSON: list of {symmetry, n_charges, samples[, K]}")
    p.add_argument("--samples", type=int, help="samples per entry of the default plan")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("optimize", parents=[common], help="CMA-ES inverse design")
    p.add_argument("--objective", default="max_bulk")
    p.add_argument("--objective-json", type=Path)
    p.add_argument("--axis", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--entry", type=int, default=3)
    p.add_argument("--target", type=float, default=0.0)
    p.add_argument("--evals", type=int, default=2000)
    p.add_argument("--population", type=int)
    p.add_argument("--sigma0", type=float, default=0.25)
    p.add_argument("--symmetry", default="cubic")
    p.add_argument("--charges", type=int, default=2)
    p.add_argument("-K", type=int, default=2)
    p.add_argument("--design", type=Path, help="initial design JSON")
    p.add_argument("--stop-at", type=float, help="stop once the best energy reaches this value")
    p.add_argument("--reeval-r", type=int, default=64, help="final re-evaluation resolution (0 = skip)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("fit", parents=[common], help="fit the representation to a target surface")
    p.add_argument("--target", default="schwarz_p")
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--charges", type=int, default=16)
    p.add_argument("-K", type=int, default=2)
    p.add_argument("--symmetry", default="cubic")
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--offset", type=float, default=0.05)
    p.add_argument("--n-on", type=int, default=2000)
    p.add_argument("--n-off", type=int, default=1000)
    p.add_argument("--design", type=Path, help="initial design JSON")
    p.set_defaults(func=cmd_fit, resolution=64)

    p = sub.add_parser("export", parents=[common, design], help="isosurface or voxel-solid mesh")
    p.add_argument("--format", choices=("stl", "obj"), default="stl")
    p.add_argument("--voxels", type=float, help="export voxels with stiffness ratio >= this value")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("tile", parents=[common], help="blend several designs into one block")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("-n", type=int, help="repeat the tile grid to n x n x n blocks")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("bench", parents=[common, design], help="stage timings across resolutions")
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        shell = ShellParams(args.sharpness, args.floor, args.layers)
        material = BaseMaterial(args.youngs, args.poisson)
        threads = resolve_threads(args.threads)
        cfg = RunConfig(args.resolution, shell, material, args.seed, args.out, threads)
        run = Run(cfg, args.command, args)
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            args.func(args, run)
        else:
            with threadpool_limits(limits=threads):
                args.func(args, run)
        run.finish()
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DegenerateDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ShellularError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

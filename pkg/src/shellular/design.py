"""Sampling campaigns, inverse-design objectives, CMA-ES and surface fitting."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateDesignError, ShellularError, ValidationError
from .fem import BaseMaterial, ElasticTensor, homogenize
from .field import (
    DesignParams,
    eval_field_points,
    eval_field_vjp,
    random_design,
    sample_grid,
    weight_orbits,
)
from .props import PropertyReport, isotropic_distance, offdiag_sum, property_report
from .voxel import ShellParams

log = logging.getLogger(__name__)

OBJECTIVE_KINDS = ("max_young_axis", "max_young_iso", "max_bulk", "max_shear", "max_offdiag", "target_entry")


# ---------------------------------------------------------------------------
# objectives

@dataclass(frozen=True)
class ObjectiveSpec:
    """Which energy to minimize plus the evaluation context.

    ``axis`` is used by ``max_young_axis`` (1..3), ``gamma`` by
    ``max_young_iso``, ``entry``/``target`` by ``target_entry`` (the diagonal
    entry C_kk with k in 1..6).
    """

    kind: str
    axis: int = 1
    gamma: float = 0.0
    entry: int = 3
    target: float = 0.0
    r: int = 32
    shell: ShellParams = field(default_factory=ShellParams)
    material: BaseMaterial = field(default_factory=BaseMaterial)

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValidationError(f"unknown objective {self.kind!r}; choose from {OBJECTIVE_KINDS}")
        if self.axis not in (1, 2, 3):
            raise ValidationError("axis must be 1, 2 or 3")
        if self.entry not in range(1, 7):
            raise ValidationError("entry must be in 1..6")
        if self.gamma < 0 or self.target < 0:
            raise ValidationError("gamma and target must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "axis": self.axis, "gamma": self.gamma, "entry": self.entry,
                "target": self.target, "r": self.r,
                "shell": {"sharpness": self.shell.sharpness, "floor": self.shell.floor,
                          "expand_layers": self.shell.expand_layers},
                "material": {"youngs": self.material.youngs, "poisson": self.material.poisson}}

    @classmethod
    def from_dict(cls, doc: dict) -> "ObjectiveSpec":
        doc = dict(doc)
        shell = ShellParams(**doc.pop("shell", {}))
        material = BaseMaterial(**doc.pop("material", {}))
        known = {"kind", "axis", "gamma", "entry", "target", "r"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown objective keys: {sorted(unknown)}")
        return cls(shell=shell, material=material, **doc)


@dataclass
class Evaluation:
    energy: float
    tensor: ElasticTensor | None = None
    report: PropertyReport | None = None
    volume_ratio: float = math.nan
    diagnostic: str | None = None
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return math.isfinite(self.energy)


def _energy(spec: ObjectiveSpec, c: np.ndarray, V: float, report: PropertyReport | None) -> float:
    if spec.kind == "target_entry":
        k = spec.entry - 1
        return abs(c[k, k] - spec.target)
    if spec.kind == "max_offdiag":
        return -offdiag_sum(c)
    if report is None:
        raise ShellularError("property report unavailable", stage="props")
    if spec.kind == "max_young_axis":
        return -report.E_dir[spec.axis - 1] / V
    if spec.kind == "max_young_iso":
        return -report.E_eff / V + spec.gamma * isotropic_distance(c)
    if spec.kind == "max_bulk":
        return -report.K_eff / V
    return -report.G_eff / V


def evaluate_objective(spec: ObjectiveSpec, params: DesignParams) -> Evaluation:
    """Homogenize and score one design; failures yield ``+inf`` with a diagnostic."""
    try:
        res = homogenize(params, spec.shell, spec.material, spec.r)
    except ShellularError as exc:
        return Evaluation(math.inf, diagnostic=str(exc))
    c = res.tensor.c
    V = res.volume_ratio
    report = None
    diagnostic = None
    try:
        report = property_report(c, V, spec.material)
    except ShellularError as exc:
        diagnostic = str(exc)
    try:
        energy = float(_energy(spec, c, V, report))
    except ShellularError as exc:
        return Evaluation(math.inf, res.tensor, None, V, str(exc), res.timings)
    return Evaluation(energy, res.tensor, report, V, diagnostic, res.timings)


# ---------------------------------------------------------------------------
# sampling campaign

@dataclass(frozen=True)
class PlanEntry:
    symmetry: str
    n_charges: int
    samples: int
    K: int = 2
    weight_range: tuple[float, float] = (0.0, 1.0)


# Charge counts are pre-expansion counts per symmetry mode.
DEFAULT_PLAN = (
    PlanEntry("cubic_octant", 8, 1000), PlanEntry("cubic_octant", 16, 1000),
    PlanEntry("tetrahedral", 4, 1000), PlanEntry("tetrahedral", 8, 1000),
    PlanEntry("none", 64, 1000), PlanEntry("none", 128, 1000),
)

TENSOR_COLUMNS = [f"C{i + 1}{j + 1}" for i in range(6) for j in range(i, 6)]
CAMPAIGN_COLUMNS = ["design", "symmetry", "n_charges", "sample", "n_elements", "t_fwd_ms"] \
    + PropertyReport.header() + TENSOR_COLUMNS


def design_seed(seed: int, entry: int, sample: int) -> np.random.Generator:
    return np.random.default_rng([seed, entry, sample])


@dataclass
class CampaignResult:
    rows: list[dict]
    skipped: list[dict]
    total: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CAMPAIGN_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def sample_campaign(plan: Sequence[PlanEntry], seed: int, *, r: int = 32,
                    shell: ShellParams | None = None, material: BaseMaterial | None = None,
                    out: str | Path | None = None, timings: bool = False) -> CampaignResult:
    """Homogenize random designs listed in ``plan``; one CSV row per success.

    Timing columns are zero unless ``timings`` is set, which keeps the CSV
    byte-identical across runs with the same seed.
    """
    shell = shell or ShellParams()
    material = material or BaseMaterial()
    rows, skipped = [], []
    total = 0
    for e, entry in enumerate(plan):
        for s in range(entry.samples):
            total += 1
            name = f"{e}-{s}"
            try:
                params = random_design(entry.symmetry, entry.n_charges, entry.K,
                                       entry.weight_range, design_seed(seed, e, s))
                res = homogenize(params, shell, material, r)
                report = property_report(res.tensor.c, res.volume_ratio, material)
            except ShellularError as exc:
                log.warning("design %s skipped: %s", name, exc)
                skipped.append({"design": name, "reason": str(exc)})
                continue
            c = res.tensor.c
            row = {"design": name, "symmetry": entry.symmetry, "n_charges": entry.n_charges,
                   "sample": s, "n_elements": res.mesh.n_elements,
                   "t_fwd_ms": float(res.timings["t_fwd"]) if timings else 0.0}
            row.update(report.to_dict())
            row.update({col: float(c[int(col[1]) - 1, int(col[2]) - 1]) for col in TENSOR_COLUMNS})
            rows.append(row)
    result = CampaignResult(rows, skipped, total)
    if out is not None:
        Path(out).write_text(result.to_csv())
    return result


# ---------------------------------------------------------------------------
# CMA-ES

@dataclass(frozen=True)
class OptimizerConfig:
    """CMA-ES settings; ``sigma0`` is relative to the box width of each coordinate.

    ``target`` stops the run once the best energy is at or below it.
    """

    population: int | None = None
    sigma0: float = 0.25
    max_evals: int = 2000
    seed: int = 0
    symmetry: str = "cubic_octant"
    n_charges: int = 2
    K: int = 2
    weight_range: tuple[float, float] = (0.0, 1.0)
    target: float | None = None
    workers: int = 1

    def __post_init__(self):
        if self.population is not None and self.population < 4:
            raise ValidationError("population must be >= 4")
        if self.max_evals < (self.population or 4):
            raise ValidationError("max_evals must be at least the population size")
        if not self.sigma0 > 0:
            raise ValidationError("sigma0 must be positive")


@dataclass
class TraceRow:
    generation: int
    evals: int
    best: float
    median: float


@dataclass
class OptimizationResult:
    best: DesignParams
    best_energy: float
    best_evaluation: Evaluation
    trace: list[TraceRow]
    evals: int
    stop_reason: str

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "evals", "best", "median"])
        for t in self.trace:
            w.writerow([t.generation, t.evals, repr(t.best), repr(t.median)])
        return buf.getvalue()


class OptimizationAborted(ShellularError):
    def __init__(self, message, trace):
        super().__init__(message, stage="optimize")
        self.trace = trace


class ParameterBox:
    """Maps the unit cube onto design vectors (positions then weight orbits)."""

    def __init__(self, template: DesignParams, weight_range: tuple[float, float]):
        self.template = template
        n_pos = template.positions.size
        n_w = len(weight_orbits(template.K, template.symmetry))
        pos_hi = 1.0 if template.symmetry == "none" else 0.5
        self.lo = np.concatenate([np.zeros(n_pos), np.full(n_w, weight_range[0])])
        self.hi = np.concatenate([np.full(n_pos, pos_hi), np.full(n_w, weight_range[1])])
        self.n_pos = n_pos

    @property
    def dim(self) -> int:
        return len(self.lo)

    def to_unit(self, params: DesignParams) -> np.ndarray:
        width = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return np.clip((params.to_vector() - self.lo) / width, 0.0, 1.0)

    def decode(self, z: np.ndarray) -> DesignParams:
        vec = self.lo + z * (self.hi - self.lo)
        if self.template.symmetry == "tetrahedral":
            # any coordinate order is an image of the ordered one under the group
            pos = -np.sort(-vec[:self.n_pos].reshape(-1, 3), axis=1)
            vec = np.concatenate([pos.ravel(), vec[self.n_pos:]])
        return self.template.from_vector(vec)


def reflect_unit(z: np.ndarray) -> np.ndarray:
    """Fold arbitrary reals into [0, 1] by mirror reflection at the bounds."""
    z = np.mod(z, 2.0)
    return np.where(z > 1.0, 2.0 - z, z)


def cma_es_optimize(spec: ObjectiveSpec, cfg: OptimizerConfig, init: DesignParams | None = None,
                    objective: Callable[[DesignParams], Evaluation] | None = None,
                    on_generation: Callable[[TraceRow], None] | None = None) -> OptimizationResult:
    """(mu/mu_w, lambda)-CMA-ES over the unit-normalized parameter box."""
    objective = objective or (lambda p: evaluate_objective(spec, p))
    rng = np.random.default_rng(cfg.seed)
    template = init or random_design(cfg.symmetry, cfg.n_charges, cfg.K, cfg.weight_range, rng)
    box = ParameterBox(template, cfg.weight_range)
    n = box.dim

    lam = cfg.population or 4 + int(3 * math.log(n))
    mu = lam // 2
    w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mu_eff = 1.0 / np.sum(w ** 2)
    c_sigma = (mu_eff + 2) / (n + mu_eff + 5)
    d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
    c_c = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    c_1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

    mean = box.to_unit(template)
    sigma = cfg.sigma0
    C = np.eye(n)
    B = np.eye(n)
    D = np.ones(n)
    p_sigma = np.zeros(n)
    p_c = np.zeros(n)
    eigen_age = 0

    best_z, best_eval = None, Evaluation(math.inf)
    trace: list[TraceRow] = []
    evals = 0
    generation = 0
    stop = "max_evals"
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while evals + lam <= cfg.max_evals:
            generation += 1
            noise = rng.standard_normal((lam, n))
            raw = mean + sigma * (noise * D) @ B.T
            z = reflect_unit(raw)
            candidates = [box.decode(zi) for zi in z]
            results = list(pool.map(objective, candidates)) if pool else [objective(c) for c in candidates]
            evals += lam
            energies = np.array([r.energy for r in results])
            finite = np.isfinite(energies)
            if not finite.any():
                trace.append(TraceRow(generation, evals, best_eval.energy, math.inf))
                raise OptimizationAborted(f"generation {generation}: every candidate was degenerate", trace)
            order = np.argsort(energies, kind="stable")
            if energies[order[0]] < best_eval.energy:
                best_z, best_eval = z[order[0]], results[order[0]]
            row = TraceRow(generation, evals, best_eval.energy, float(np.median(energies)))
            trace.append(row)
            if on_generation:
                on_generation(row)
            if cfg.target is not None and best_eval.energy <= cfg.target:
                stop = "target"
                break

            # selection and recombination on the repaired points
            y = (z[order[:mu]] - mean) / sigma
            y_w = w @ y
            mean = mean + sigma * y_w
            inv_sqrt = B @ np.diag(1 / D) @ B.T
            p_sigma = (1 - c_sigma) * p_sigma + math.sqrt(c_sigma * (2 - c_sigma) * mu_eff) * inv_sqrt @ y_w
            h_sig = (np.linalg.norm(p_sigma) / math.sqrt(1 - (1 - c_sigma) ** (2 * generation))
                     < (1.4 + 2 / (n + 1)) * chi_n)
            p_c = (1 - c_c) * p_c + h_sig * math.sqrt(c_c * (2 - c_c) * mu_eff) * y_w
            rank_mu = (y.T * w) @ y
            C = ((1 - c_1 - c_mu) * C
                 + c_1 * (np.outer(p_c, p_c) + (1 - h_sig) * c_c * (2 - c_c) * C)
                 + c_mu * rank_mu)
            sigma *= math.exp((c_sigma / d_sigma) * (np.linalg.norm(p_sigma) / chi_n - 1))
            sigma = min(sigma, 1.0)
            eigen_age += lam
            if eigen_age > lam / (c_1 + c_mu) / n / 10:
                eigen_age = 0
                C = np.triu(C) + np.triu(C, 1).T
                evals_c, B = np.linalg.eigh(C)
                D = np.sqrt(np.maximum(evals_c, 1e-20))
            if sigma * D.max() < 1e-12:
                stop = "converged"
                break
    finally:
        if pool:
            pool.shutdown()
    return OptimizationResult(box.decode(best_z), best_eval.energy, best_eval, trace, evals, stop)


def random_search(spec: ObjectiveSpec, n: int, seed: int, *, symmetry: str = "cubic_octant",
                  n_charges: int = 2, K: int = 2,
                  weight_range: tuple[float, float] = (0.0, 1.0)) -> tuple[DesignParams | None, Evaluation, list[float]]:
    """Best of ``n`` random designs drawn from ``default_rng([seed, i])``."""
    best, best_eval, energies = None, Evaluation(math.inf), []
    for i in range(n):
        params = random_design(symmetry, n_charges, K, weight_range, np.random.default_rng([seed, i]))
        ev = evaluate_objective(spec, params)
        energies.append(ev.energy)
        if ev.energy < best_eval.energy:
            best, best_eval = params, ev
    return best, best_eval, energies


# ---------------------------------------------------------------------------
# surface fitting

@dataclass(frozen=True)
class TargetSurface:
    """Implicit target ``f(p) = 0`` with its spatial gradient."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]


def schwarz_p() -> TargetSurface:
    tp = 2 * np.pi
    return TargetSurface(
        "schwarz_p",
        lambda p: np.cos(tp * p[:, 0]) + np.cos(tp * p[:, 1]) + np.cos(tp * p[:, 2]),
        lambda p: -tp * np.sin(tp * p),
    )


def gyroid() -> TargetSurface:
    tp = 2 * np.pi
    s, c = np.sin, np.cos

    def value(p):
        x, y, z = (tp * p).T
        return s(x) * c(y) + s(y) * c(z) + s(z) * c(x)

    def grad(p):
        x, y, z = (tp * p).T
        return tp * np.stack([c(x) * c(y) - s(z) * s(x),
                              -s(x) * s(y) + c(y) * c(z),
                              -s(y) * s(z) + c(z) * c(x)], axis=1)

    return TargetSurface("gyroid", value, grad)


def design_surface(params: DesignParams) -> TargetSurface:
    def grad(p, h=1e-6):
        out = np.empty_like(p)
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            out[:, a] = (eval_field_points(params, p + e) - eval_field_points(params, p - e)) / (2 * h)
        return out

    return TargetSurface("design", lambda p: eval_field_points(params, p), grad)


TARGETS = {"schwarz_p": schwarz_p, "gyroid": gyroid}


def project_to_surface(target: TargetSurface, points: np.ndarray, steps: int = 30) -> np.ndarray:
    """Newton projection ``p <- p - f grad f / |grad f|^2``, wrapped into [0, 1)."""
    p = np.array(points, dtype=float)
    for _ in range(steps):
        g = target.gradient(p)
        g2 = np.maximum(np.sum(g * g, axis=1), 1e-12)
        p = p - (target.value(p) / g2)[:, None] * g
    return np.mod(p, 1.0)


def sample_surface_points(target: TargetSurface, n: int, rng: np.random.Generator,
                          tol: float = 1e-9) -> np.ndarray:
    out = []
    while sum(len(o) for o in out) < n:
        p = project_to_surface(target, rng.random((2 * n, 3)))
        ok = np.abs(target.value(p)) < tol
        out.append(p[ok])
    return np.concatenate(out)[:n]


def sample_offset_points(target: TargetSurface, n: int, d: float, rng: np.random.Generator,
                         reference: np.ndarray | None = None) -> np.ndarray:
    """Uniform points whose periodic distance to the surface sample is at least ``d``."""
    if reference is None:
        reference = sample_surface_points(target, 20000, rng)
    tree = cKDTree(np.mod(reference, 1.0), boxsize=1.0)
    out = []
    count = 0
    for _ in range(1000):
        p = rng.random((4 * n, 3))
        dist, _ = tree.query(p)
        keep = p[dist >= d]
        out.append(keep)
        count += len(keep)
        if count >= n:
            return np.concatenate(out)[:n]
    raise ValidationError(f"could not place {n} points at distance >= {d} from the surface")


@dataclass(frozen=True)
class FitProblem:
    on_points: np.ndarray
    off_points: np.ndarray
    lam: float = 0.5
    d: float = 0.05
    lr: float = 0.01
    iterations: int = 5000
    seed: int = 0

    def __post_init__(self):
        for name in ("on_points", "off_points"):
            pts = np.asarray(getattr(self, name), dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
                raise ValidationError(f"{name} must be a non-empty (n, 3) array")
            if pts.min() < 0 or pts.max() >= 1:
                raise ValidationError(f"{name} must lie in [0, 1)^3")
            object.__setattr__(self, name, pts)
        if self.d < 0.05:
            raise ValidationError("offset distance d must be >= 0.05")
        if self.lam < 0 or self.lr <= 0 or self.iterations < 0:
            raise ValidationError("lam >= 0, lr > 0 and iterations >= 0 are required")

    @classmethod
    def from_target(cls, target: TargetSurface, n_on: int = 2000, n_off: int = 1000,
                    d: float = 0.05, seed: int = 0, **kw) -> "FitProblem":
        rng = np.random.default_rng(seed)
        on = sample_surface_points(target, n_on, rng)
        reference = sample_surface_points(target, 20000, rng)
        off = sample_offset_points(target, n_off, d, rng, reference)
        return cls(on, off, d=d, seed=seed, **kw)


def fit_energy(params: DesignParams, problem: FitProblem) -> tuple[float, np.ndarray]:
    """Fit energy and its gradient with respect to ``params.to_vector()``.

    The normalization ``s = 1 / max |F|`` is taken over both point sets and
    held fixed when differentiating.
    """
    pts = np.concatenate([problem.on_points, problem.off_points])
    n_on = len(problem.on_points)
    parts = {}

    def weights(F):
        f_on, f_off = F[:n_on], F[n_on:]
        s = 1.0 / max(np.abs(F).max(), 1e-300)
        t = np.tanh(s * f_off ** 2)
        parts["energy"] = float(np.sum(f_on ** 2) - problem.lam * np.sum(t))
        # dE/dF per point
        return np.concatenate([2 * f_on, -problem.lam * (1 - t ** 2) * s * 2 * f_off])

    _, g_pos, g_alpha = eval_field_vjp(params, pts, weights)
    energy = parts["energy"]
    orbits = weight_orbits(params.K, params.symmetry)
    grad = np.concatenate([g_pos.ravel(), [sum(g_alpha[k] for k in o) for o in orbits]])
    return energy, grad


@dataclass
class FitResult:
    params: DesignParams
    energy: float
    initial_energy: float
    history: list[float]
    iterations: int
    diverged: bool
    distances: dict | None = None


def _project_positions(params_vec: np.ndarray, n_pos: int, symmetry: str) -> np.ndarray:
    pos = params_vec[:n_pos].reshape(-1, 3)
    if symmetry == "none":
        pos = np.mod(pos, 1.0)
    else:
        pos = np.clip(pos, 0.0, 0.5)
        if symmetry == "tetrahedral":
            pos = -np.sort(-pos, axis=1)
    out = params_vec.copy()
    out[:n_pos] = pos.ravel()
    return out


def fit_surface(problem: FitProblem, init: DesignParams, *, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8, patience: int = 50,
                callback: Callable[[int, float], None] | None = None) -> FitResult:
    """Adam on the fit energy; returns the best iterate seen."""
    params = init
    x = params.to_vector()
    n_pos = params.positions.size
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    energy, grad = fit_energy(params, problem)
    initial = energy
    best_x, best_e = x.copy(), energy
    history = [energy]
    rising = 0
    diverged = False
    it = 0
    for it in range(1, problem.iterations + 1):
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** it)
        v_hat = v / (1 - beta2 ** it)
        x = _project_positions(x - problem.lr * m_hat / (np.sqrt(v_hat) + eps), n_pos, params.symmetry)
        params = init.from_vector(x)
        prev = energy
        energy, grad = fit_energy(params, problem)
        history.append(energy)
        if callback:
            callback(it, energy)
        if energy < best_e:
            best_x, best_e = x.copy(), energy
        rising = rising + 1 if energy > prev else 0
        if rising >= patience:
            diverged = True
            warnings.warn(f"fit energy rose for {patience} consecutive iterations; "
                          "returning the best iterate", RuntimeWarning, stacklevel=2)
            break
    return FitResult(init.from_vector(best_x), best_e, initial, history, it, diverged)


# ---------------------------------------------------------------------------
# distances

def distance_metrics(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Symmetric mean nearest-neighbour distance and Hausdorff distance on the unit torus."""
    a = np.mod(np.asarray(a, dtype=float), 1.0)
    b = np.mod(np.asarray(b, dtype=float), 1.0)
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("distance metrics need non-empty point sets")
    # boxsize rejects coordinates equal to 1.0 after rounding
    a[a >= 1.0] = 0.0
    b[b >= 1.0] = 0.0
    d_ab, _ = cKDTree(b, boxsize=1.0).query(a)
    d_ba, _ = cKDTree(a, boxsize=1.0).query(b)
    avg = 0.5 * (d_ab.mean() + d_ba.mean())
    return float(avg), float(max(d_ab.max(), d_ba.max()))


def zero_set_points(params: DesignParams, r: int = 64) -> np.ndarray:
    """Vertices of the marching-cubes zero set of a design."""
    from .geomio import extract_isosurface

    grid = sample_grid(params, r)
    if grid.degenerate:
        raise DegenerateDesignError("field is identically zero", stage="fit")
    return extract_isosurface(grid).vertices


def fit_distances(params: DesignParams, target_points: np.ndarray, r: int = 64) -> dict:
    avg, haus = distance_metrics(zero_set_points(params, r), target_points)
    return {"average": avg, "hausdorff": haus, "resolution": r, "n_target": len(target_points)}

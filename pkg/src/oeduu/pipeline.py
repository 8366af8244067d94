"""Experiment orchestration: build reduced models, optimize designs, evaluate.

Every phase writes CSV tables and JSON manifests under an output directory;
nothing binary is stored.
"""

import csv
import hashlib
import json
import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__, counters
from .config import derive_seed
from .darcy import draw_sample
from .errors import NumericalError
from .grid_prior import Grid, build_prior, gaussian_bumps
from .objective import NoiseModel, SAAProblem
from .reduction import (
    build_reduced_models,
    crf_from_sketches,
    exact_gramians,
    gramians,
    load_reduced_models,
    save_reduced_models,
    sketch,
    PreconditionedOperator,
    cluster_samples,
)
from .sparsify import PenaltyConfig, continuation
from .transport import ForwardOperator, SensorNetwork, TransportConfig

log = logging.getLogger(__name__)


@dataclass
class Setup:
    config: object
    grid: Grid
    prior: object
    theta_prior: object
    transport: TransportConfig
    sensors: SensorNetwork
    noise: NoiseModel
    m_probe: np.ndarray


def make_setup(cfg):
    g = cfg.grid
    grid = Grid(g.nx, g.ny, g.a, g.b)
    prior = build_prior(grid, cfg.prior.rho, cfg.prior.delta, np.full(grid.n, cfg.prior.mean))
    theta_prior = build_prior(grid, cfg.darcy.rho_theta, cfg.darcy.delta_theta,
                              np.full(grid.n, cfg.darcy.theta_mean))
    t = cfg.transport
    transport = TransportConfig(t.kappa, t.t1, t.n_steps, tuple(t.obs_times), t.obs_halfwidth)
    if cfg.sensors.locations is not None:
        sensors = SensorNetwork.from_points(grid, cfg.sensors.locations)
    else:
        sensors = SensorNetwork.lattice(grid, cfg.sensors.counts, cfg.sensors.margins)
    r = cfg.reduction
    m_probe = gaussian_bumps(grid, r.probe_centers, r.probe_widths, r.probe_amplitudes)
    return Setup(cfg, grid, prior, theta_prior, transport, sensors,
                 NoiseModel(cfg.noise.sigma), m_probe)


def draw_samples(setup, phase, count, master):
    d = setup.config.darcy
    return [
        draw_sample(setup.theta_prior, (d.t0_min, d.t0_max), derive_seed(master, phase, i))
        for i in range(count)
    ]


def forward_operators(setup, samples):
    return [ForwardOperator(setup.grid, smp, setup.transport, setup.sensors) for smp in samples]


class PhaseTimer:
    def __init__(self):
        self.seconds = {}

    @contextmanager
    def __call__(self, name):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - t


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _manifest(cfg, master, phase, timer, extra):
    return {
        "phase": phase,
        "package_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "master_seed": master,
        "config": cfg.to_dict(),
        "seconds": timer.seconds,
        **extra,
    }


def _master(cfg, seed):
    return int(cfg.experiment.seed if seed is None else seed)


def _seed_audit(master, n_saa, n_eval):
    saa = {tuple(derive_seed(master, "saa", i)) for i in range(n_saa)}
    ev = {tuple(derive_seed(master, "eval", i)) for i in range(n_eval)}
    return {
        "rule": "entropy (master, phase_tag, index); phase tags saa=1, eval=2",
        "saa_seeds": [list(s) for s in sorted(saa)],
        "eval_seeds": [list(s) for s in sorted(ev)],
        "disjoint": saa.isdisjoint(ev),
    }


# ---------------------------------------------------------------------------
# build-rom


def basis_size_tables(sketches, mus, sizes, clusterings):
    """Rows ``(table, mu, N, n_clusters, cluster, k)`` for basis-size reports."""
    rows = []
    for mu in mus:
        for N in sizes:
            res = crf_from_sketches(sketches.subset(range(N)), mu)
            rows.append(("growth", mu, N, 1, 0, res.k))
        for l, clus in clusterings.items():
            for p in range(l):
                idx = clus.members(p)
                res = crf_from_sketches(sketches.subset(idx), mu)
                rows.append(("clusters", mu, len(sketches.Y), l, p, res.k))
    return rows


def run_build_rom(cfg, out, seed=None, workers=None):
    """Sample the uncertainty, build the clustered reduced models and archive them."""
    out = Path(out)
    master = _master(cfg, seed)
    workers = workers or cfg.experiment.workers
    timer = PhaseTimer()
    setup = make_setup(cfg)
    red = cfg.reduction
    with counters.track() as pde, timer("sampling"):
        samples = draw_samples(setup, "saa", cfg.experiment.n_saa, master)
        ops = forward_operators(setup, samples)
    with counters.track() as pde_rom, timer("reduction"):
        sk = sketch([PreconditionedOperator(F, setup.prior) for F in ops], red.r_sketch,
                    derive_seed(master, "sketch"), workers)
        clusterings = {}
        for l in sorted({1, red.n_clusters, min(4, len(ops))}):
            if l > 1:
                clusterings[l] = cluster_samples(ops, setup.m_probe, l,
                                                 derive_seed(master, "cluster"))
        rms = build_reduced_models(
            ops, setup.prior, red.mu, red.n_clusters, setup.m_probe, red.mode,
            derive_seed(master, "sketch"), red.r_sketch, red.rule,
            clustering=clusterings.get(red.n_clusters), sketches=sk,
        )
    with timer("tables"):
        sizes = sorted({max(1, len(ops) // 2), len(ops)})
        table = basis_size_tables(sk, [red.mu, red.mu_eval], sizes,
                                  {l: c for l, c in clusterings.items()})
        _write_csv(out / "tables" / "basis_sizes.csv",
                   ["table", "mu", "N", "n_clusters", "cluster", "k"], table)
    with timer("archive"):
        rom_dir = out / "rom"
        files = save_reduced_models(rms, rom_dir, extra={
            "s": setup.sensors.s,
            "r": setup.transport.r,
            "sigma": setup.noise.sigma,
            "sketch_seed": derive_seed(master, "sketch"),
        })
        samples_meta = [{"index": i, "seed": derive_seed(master, "saa", i), "t0": smp.t0}
                        for i, smp in enumerate(samples)]
        (rom_dir / "samples.json").write_text(json.dumps(samples_meta, indent=2))
        files.append("samples.json")
        checksums = {f: _sha256(rom_dir / f) for f in sorted(files)}
        (rom_dir / "checksums.json").write_text(json.dumps(checksums, indent=2, sort_keys=True))
    summary = {
        "basis_sizes": rms.basis_sizes,
        "cluster_ids": [int(c) for c in rms.clustering.assignments],
        "table": [dict(zip(["table", "mu", "N", "n_clusters", "cluster", "k"], row))
                  for row in table],
        "pde_solves": {"sampling": pde, "reduction": pde_rom},
        "seed_audit": _seed_audit(master, cfg.experiment.n_saa, cfg.experiment.n_eval),
    }
    (out / "manifests").mkdir(parents=True, exist_ok=True)
    (out / "manifests" / "build_rom.json").write_text(
        json.dumps(_manifest(cfg, master, "build-rom", timer, summary), indent=2))
    return summary


def load_problem(rom_dir, noise=None):
    """``SAAProblem`` from an archive written by ``run_build_rom``."""
    manifest, models, grams = load_reduced_models(rom_dir)
    gr = [gramians(rf, None, grams[rf.cluster_id]) for rf in models]
    sigma = manifest["sigma"] if noise is None else noise
    return SAAProblem(gr, sigma, manifest["s"], manifest["r"]), manifest


# ---------------------------------------------------------------------------
# optimize


def optimize_designs(problem, gamma_grid, penalty_kwargs, modes=("oeduu", "deterministic"),
                     n_deterministic=0, stream=None):
    """Continuation for every ``gamma`` in OEDUU and/or per-sample deterministic mode.

    Returns a list of dicts ``(mode, sample, gamma, w, nnz, phi, stages, converged)``.
    """
    families = []
    if "oeduu" in modes:
        families.append(("oeduu", -1, problem))
    if "deterministic" in modes:
        families.extend(("deterministic", j, problem.subset([j])) for j in range(n_deterministic))
    designs = []
    for mode, j, prob in families:
        for gamma in gamma_grid:
            cfg = PenaltyConfig(gamma=float(gamma), **penalty_kwargs)
            t = time.perf_counter()
            state = continuation(prob, cfg)
            rec = {
                "mode": mode,
                "sample": j,
                "gamma": float(gamma),
                "w": state.w_binary,
                "nnz": state.nnz,
                "phi": prob.phi_n(state.w_binary),
                "phi_l1_rounded": prob.phi_n(np.round(state.w_l1)),
                "l1_norm": float(np.sum(state.w_l1)),
                "stages": state.stage,
                "converged": state.converged,
                "history": state.history,
            }
            designs.append(rec)
            if stream is not None:
                stream.write(json.dumps({
                    "event": "continuation", "mode": mode, "sample": j, "gamma": float(gamma),
                    "nnz": rec["nnz"], "phi": rec["phi"], "stages": rec["stages"],
                    "converged": rec["converged"], "seconds": time.perf_counter() - t,
                    "objective_evals": prob.stats.n_value, "gradient_evals": prob.stats.n_grad,
                }) + "\n")
    return designs


def _penalty_kwargs(cfg):
    p = cfg.penalty
    return dict(alpha=p.alpha, eps_ratio=p.eps_ratio, binary_tol=p.binary_tol,
                max_stages=p.max_stages, pgtol=p.pgtol, max_iter=p.max_iter)


def design_id(rec):
    tag = "oeduu" if rec["mode"] == "oeduu" else f"det{rec['sample']}"
    return f"{tag}_g{rec['gamma']:g}"


def write_designs(out, designs, sensors):
    out = Path(out)
    rows = []
    for rec in designs:
        did = design_id(rec)
        _write_csv(out / "designs" / f"{did}.csv", ["sensor", "x", "y", "weight"],
                   [(l, x, y, int(wl)) for l, ((x, y), wl)
                    in enumerate(zip(sensors.locations, rec["w"]))])
        rows.append((did, rec["mode"], rec["sample"], rec["gamma"], rec["nnz"], rec["phi"],
                     rec["phi_l1_rounded"], rec["l1_norm"], rec["stages"], int(rec["converged"])))
    _write_csv(out / "designs" / "summary.csv",
               ["design", "mode", "sample", "gamma", "nnz", "phi_n", "phi_n_l1_rounded",
                "l1_norm", "stages", "converged"], rows)


def read_designs(out):
    out = Path(out)
    designs = []
    for row in _read_csv(out / "designs" / "summary.csv"):
        table = _read_csv(out / "designs" / f"{row['design']}.csv")
        designs.append({
            "design": row["design"],
            "mode": row["mode"],
            "sample": int(row["sample"]),
            "gamma": float(row["gamma"]),
            "nnz": int(row["nnz"]),
            "w": np.array([float(t["weight"]) for t in table]),
        })
    return designs


def run_optimize(cfg, rom_dir, out, modes=None, seed=None):
    """Continuation over the gamma grid using only the archived reduced models."""
    out = Path(out)
    master = _master(cfg, seed)
    modes = list(modes or cfg.experiment.modes)
    timer = PhaseTimer()
    setup = make_setup(cfg)
    with timer("load"):
        problem, manifest = load_problem(rom_dir, cfg.noise.sigma)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    with open(out / "logs" / "optimize.jsonl", "w") as stream, \
            counters.track() as pde, timer("optimize"):
        designs = optimize_designs(
            problem, cfg.experiment.gamma_grid, _penalty_kwargs(cfg), modes,
            cfg.experiment.n_deterministic, stream,
        )
    if sum(pde.values()) != 0:
        raise NumericalError(f"PDE solves performed during optimization: {pde}")
    with open(out / "logs" / "continuation.jsonl", "w") as fh:
        for rec in designs:
            for h in rec["history"]:
                fh.write(json.dumps({"design": design_id(rec), **h}) + "\n")
    write_designs(out, designs, setup.sensors)
    extra = {"pde_solves_during_optimization": pde, "n_designs": len(designs), "modes": modes}
    if "validate" in modes:
        with timer("validate"):
            extra["validation"] = validate_designs(setup, master, problem, designs, out)
    (out / "manifests").mkdir(parents=True, exist_ok=True)
    (out / "manifests" / "optimize.json").write_text(
        json.dumps(_manifest(cfg, master, "optimize", timer, extra), indent=2))
    return designs, extra


def validate_designs(setup, master, problem, designs, out):
    """Re-evaluate OEDUU designs with exact (full PDE) Gramians."""
    cfg = setup.config
    samples = draw_samples(setup, "saa", cfg.experiment.n_saa, master)
    ops = forward_operators(setup, samples)
    exact = SAAProblem([exact_gramians(F, setup.prior) for F in ops], setup.noise,
                       problem.s, problem.r, ops, method="dense")
    rows = []
    for rec in designs:
        if rec["mode"] != "oeduu":
            continue
        sur, ex = problem.phi_n(rec["w"]), exact.phi_n(rec["w"])
        rows.append((design_id(rec), rec["nnz"], sur, ex, abs(sur - ex) / max(abs(ex), 1e-300)))
    w1 = np.ones(problem.s)
    sur, ex = problem.phi_n(w1), exact.phi_n(w1)
    rows.append(("all_ones", problem.s, sur, ex, abs(sur - ex) / abs(ex)))
    _write_csv(Path(out) / "validation.csv",
               ["design", "nnz", "phi_n_surrogate", "phi_n_exact", "relative_gap"], rows)
    return {"max_relative_gap": max(r[4] for r in rows)}


# ---------------------------------------------------------------------------
# evaluate

PERCENTILES = (2, 25, 50, 75, 98)


def evaluate_designs(problem, designs):
    """Per-design held-out statistics of ``-tr K`` over the evaluation samples."""
    rows = []
    for rec in designs:
        vals = -problem.per_sample_trace_updates(rec["w"])
        pct = np.percentile(vals, PERCENTILES)
        rows.append({
            "design": rec.get("design", design_id(rec)),
            "mode": rec["mode"],
            "sample": rec["sample"],
            "gamma": rec["gamma"],
            "nnz": int(rec["nnz"]),
            "mean": float(vals.mean()),
            **{f"p{q}": float(v) for q, v in zip(PERCENTILES, pct)},
        })
    return rows


def compare_budgets(rows):
    """OEDUU mean versus the median deterministic mean at each shared sensor count."""
    out = []
    oed = {}
    for r in rows:
        if r["mode"] == "oeduu" and r["nnz"] > 0:
            oed.setdefault(r["nnz"], []).append(r["mean"])
    for nnz in sorted(oed):
        det = [r["mean"] for r in rows if r["mode"] == "deterministic" and r["nnz"] == nnz]
        if not det:
            continue
        o = float(np.min(oed[nnz]))
        med = float(np.median(det))
        out.append({
            "nnz": nnz,
            "oeduu_mean": o,
            "deterministic_median": med,
            "deterministic_mean": float(np.mean(det)),
            "deterministic_best": float(np.min(det)),
            "n_deterministic": len(det),
            "advantage": med - o,
            "oeduu_better": bool(o <= med),
        })
    return out


def run_evaluate(cfg, design_dir, out, seed=None, workers=None):
    """Held-out evaluation with a more accurate reduced model on fresh samples."""
    out = Path(out)
    master = _master(cfg, seed)
    workers = workers or cfg.experiment.workers
    timer = PhaseTimer()
    setup = make_setup(cfg)
    red = cfg.reduction
    designs = read_designs(design_dir)
    with timer("sampling"):
        samples = draw_samples(setup, "eval", cfg.experiment.n_eval, master)
        ops = forward_operators(setup, samples)
    with counters.track() as pde, timer("reduction"):
        clustering = None
        if red.n_clusters > 1:
            clustering = cluster_samples(ops, setup.m_probe, red.n_clusters,
                                         derive_seed(master, "cluster"))
        rms = build_reduced_models(
            ops, setup.prior, red.mu_eval, red.n_clusters, setup.m_probe, "two-pass",
            derive_seed(master, "sketch_eval"), red.r_sketch_eval, red.rule,
            clustering=clustering, workers=workers,
        )
    problem = SAAProblem(rms.gramians(), setup.noise, setup.sensors.s, setup.transport.r)
    with timer("evaluate"):
        rows = evaluate_designs(problem, designs)
        comparison = compare_budgets(rows)
    cols = ["design", "mode", "sample", "gamma", "nnz", "mean"] + [f"p{q}" for q in PERCENTILES]
    _write_csv(out / "evaluation" / "per_design.csv", cols, [[r[c] for c in cols] for r in rows])
    ccols = ["nnz", "oeduu_mean", "deterministic_median", "deterministic_mean",
             "deterministic_best", "n_deterministic", "advantage", "oeduu_better"]
    _write_csv(out / "evaluation" / "budget_comparison.csv", ccols,
               [[c_[c] for c in ccols] for c_ in comparison])
    summary = {
        "eval_basis_sizes": rms.basis_sizes,
        "pde_solves": pde,
        "fraction_oeduu_better": (float(np.mean([c["oeduu_better"] for c in comparison]))
                                  if comparison else None),
        "mean_advantage": (float(np.mean([c["advantage"] for c in comparison]))
                           if comparison else None),
        "n_budgets": len(comparison),
        "seed_audit": _seed_audit(master, cfg.experiment.n_saa, cfg.experiment.n_eval),
    }
    (out / "manifests").mkdir(parents=True, exist_ok=True)
    (out / "manifests" / "evaluate.json").write_text(
        json.dumps(_manifest(cfg, master, "evaluate", timer, summary), indent=2))
    return rows, comparison, summary


def run_all(cfg, out, seed=None, workers=None, modes=None):
    """build-rom, optimize and evaluate in sequence; fails fast, recording completed phases."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    completed, report = [], {}
    t0 = time.perf_counter()
    counters_start = counters.snapshot()
    try:
        report["build_rom"] = run_build_rom(cfg, out, seed, workers)
        completed.append("build-rom")
        _, report["optimize"] = run_optimize(cfg, out / "rom", out, modes, seed)
        completed.append("optimize")
        _, comparison, report["evaluate"] = run_evaluate(cfg, out, out, seed, workers)
        report["comparison"] = comparison
        completed.append("evaluate")
    finally:
        end = counters.snapshot()
        report["completed_phases"] = completed
        report["seconds"] = time.perf_counter() - t0
        report["pde_solves_total"] = {k: end[k] - counters_start[k] for k in end}
        (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return report


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    raise TypeError(type(obj))

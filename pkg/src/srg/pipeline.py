"""End-to-end orchestration: dataset creation, labelling, training, guided
solving with trust-region search, evaluation tables and figures.

A run lives in one directory::

    config.json
    instances/{train,test}/0000.json
    labels/{train,test}/0000.json
    embeddings/{train,test}/0000.npy   (tokens of the initial encoder)
    checkpoints/model.ckpt, checkpoints/losses.csv
    results/solutions.csv, trajectories.csv, penalty.csv, metrics.csv
    results/figures/*.svg

Everything except columns ending in ``seconds`` is a function of the
configuration and its master seed.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from srg import plots
from srg.bnb import (STATUS_OPTIMAL, SearchResult, SolveLimits,
                     TrustRegionSpec, add_trust_region, repair_heuristic, solve_milp)
from srg.diffusion import (DDIM_EARLYSTOP, SampleConfig, TrainConfig, TrainItem,
                           generate_diverse, sample_ddim_earlystop, sample_ddpm, train)
from srg.encoder import build_bipartite, encode, init_encoder
from srg.generators import fixed_toy_instance, gen_toy_2d_lp, generate, preset
from srg.grid import choose_grid
from srg.io import read_instance, write_instance
from srg.lagrangian import NOISE, POLYAK, GuidanceConfig, penalty_term, subgradient_solve
from srg.milp import MilpInstance, Solution, display_objective, make_solution, to_canonical_min
from srg.scorenet import load_checkpoint, save_checkpoint
from srg.simplex import OPTIMAL, solve_lp

SPLITS = {"train": 0, "test": 1}
_TRAIN_STREAM, _SAMPLE_STREAM = 2, 3

# Per-benchmark defaults: diffusion steps and guidance weights, DDIM steps
# at sampling time (None = every step), and trust-region radius as a
# fraction of the integer variables (reference radius over |I| at medium
# scale, except independent set: 6% of a tiny graph is a radius
# of 3, too tight to leave the sampled neighbourhood).  Set cover and
# independent set run the full chain: at tiny scale 3-5 strided steps over
# the 20-step schedule overshoot badly.
BENCHMARK_DEFAULTS = {
    "set_cover": dict(T=20, gamma_o=1.0, gamma_c=2.0, T_sample=None, delta_fraction=0.2),
    "mis": dict(T=20, gamma_o=3.0, gamma_c=1.0, T_sample=None, delta_fraction=0.3),
    "ca": dict(T=5, gamma_o=0.05, gamma_c=100.0, T_sample=5, delta_fraction=0.5),
    "cfl": dict(T=50, gamma_o=0.05, gamma_c=10.0, T_sample=50, delta_fraction=1.0),
}


class ConfigError(ValueError):
    """Bad configuration or missing/corrupt run directory."""


def derive_seed(*key: int) -> int:
    """64-bit seed for one stream, e.g. ``(master, split, index)``."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0])


# ------------------------------------------------------------------ config

def _limits_to_dict(lim: SolveLimits) -> dict:
    return {k: (None if isinstance(v, float) and math.isinf(v) else v)
            for k, v in asdict(lim).items()}


def _limits_from_dict(d: dict) -> SolveLimits:
    return SolveLimits(**{k: (math.inf if v is None else v) for k, v in d.items()})


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str
    scale: str = "tiny"
    n_train: int = 100
    n_test: int = 20
    master_seed: int = 0
    out_dir: str = "srg_run"
    train: TrainConfig | None = None
    sample: SampleConfig = field(default_factory=SampleConfig)
    delta_fraction: float | None = None  # None: use sample.delta as is
    label_limits: SolveLimits = field(default_factory=lambda: SolveLimits(node_limit=20000))
    # baseline and guided search share these limits
    search_limits: SolveLimits = field(default_factory=lambda: SolveLimits(node_limit=200))
    repair_budget: float = math.inf
    repair_node_limit: int = 500
    subgradient_iters: int = 2000
    encoder_seed: int = 0
    generator_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be at least 1")
        if self.train is None:
            raise ConfigError("a TrainConfig is required")
        if self.delta_fraction is not None and not 0 <= self.delta_fraction <= 1:
            raise ConfigError("delta_fraction must lie in [0, 1]")
        if self.repair_node_limit < 1 or self.subgradient_iters < 1:
            raise ConfigError("repair_node_limit and subgradient_iters must be positive")
        if self.sample.T_sample is not None and self.sample.T_sample > self.train.T:
            raise ConfigError("T_sample exceeds the number of diffusion steps")

    @property
    def root(self) -> Path:
        return Path(self.out_dir)

    def generator_config(self, split: str, index: int):
        seed = derive_seed(self.master_seed, SPLITS[split], index)
        return preset(self.benchmark, self.scale, seed, **self.generator_overrides)

    def delta_for(self, inst: MilpInstance) -> int:
        if self.delta_fraction is None:
            return self.sample.delta
        return int(round(self.delta_fraction * inst.int_indices.size))

    def sample_for(self, index: int) -> SampleConfig:
        return replace(self.sample, master_seed=derive_seed(self.master_seed, _SAMPLE_STREAM, index))

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark, "scale": self.scale,
            "n_train": self.n_train, "n_test": self.n_test,
            "master_seed": self.master_seed, "out_dir": str(self.out_dir),
            "train": self.train.to_dict(), "sample": self.sample.to_dict(),
            "delta_fraction": self.delta_fraction,
            "label_limits": _limits_to_dict(self.label_limits),
            "search_limits": _limits_to_dict(self.search_limits),
            "repair_budget": None if math.isinf(self.repair_budget) else self.repair_budget,
            "repair_node_limit": self.repair_node_limit,
            "subgradient_iters": self.subgradient_iters,
            "encoder_seed": self.encoder_seed,
            "generator_overrides": dict(self.generator_overrides),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d["train"])
        d["sample"] = SampleConfig(**d["sample"])
        d["label_limits"] = _limits_from_dict(d["label_limits"])
        d["search_limits"] = _limits_from_dict(d["search_limits"])
        d["repair_budget"] = math.inf if d.get("repair_budget") is None else d["repair_budget"]
        return cls(**d)

    def save(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / "config.json"
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, out_dir) -> "ExperimentConfig":
        path = Path(out_dir) / "config.json"
        if not path.exists():
            raise ConfigError(f"{path} not found; run `srg gen` first")
        cfg = cls.from_dict(json.loads(path.read_text()))
        return replace(cfg, out_dir=str(out_dir))


def experiment_preset(benchmark: str, scale: str = "tiny", out_dir="srg_run",
                      master_seed: int = 0, epochs: int = 60, **overrides) -> ExperimentConfig:
    """Configuration with the per-benchmark diffusion, guidance and search
    defaults; the grid shape follows the instance size of ``scale``."""
    if benchmark not in BENCHMARK_DEFAULTS:
        raise ConfigError(f"no experiment defaults for {benchmark!r}")
    d = BENCHMARK_DEFAULTS[benchmark]
    probe = generate(preset(benchmark, scale, 0, **overrides.get("generator_overrides", {})))
    h, w = choose_grid(probe.n)
    train_cfg = TrainConfig(
        h=h, w=w, T=d["T"], epochs=epochs,
        guidance=GuidanceConfig(d["gamma_o"], d["gamma_c"], convention=NOISE,
                                exact_indicator=True, normalize=True),
        seed=derive_seed(master_seed, _TRAIN_STREAM) % 2**32, train_encoder=True,
    )
    sample = SampleConfig(sampler=DDIM_EARLYSTOP, T_sample=d["T_sample"], k=8)
    kw = dict(benchmark=benchmark, scale=scale, out_dir=str(out_dir), master_seed=master_seed,
              train=train_cfg, sample=sample, delta_fraction=d["delta_fraction"])
    kw.update(overrides)
    return ExperimentConfig(**kw)


# ----------------------------------------------------------------- dataset

def _item_path(root: Path, kind: str, split: str, index: int, suffix: str) -> Path:
    return root / kind / split / f"{index:04d}{suffix}"


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def generate_instances(cfg: ExperimentConfig) -> Path:
    cfg.save()
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        for i in range(count):
            inst = generate(cfg.generator_config(split, i))
            path = _item_path(cfg.root, "instances", split, i, ".json")
            path.parent.mkdir(parents=True, exist_ok=True)
            write_instance(inst, path)
    return cfg.root


def label_instance(inst: MilpInstance, cfg: ExperimentConfig) -> dict:
    """Exact solve plus Lagrangian multipliers for one instance.

    Instances whose search hit a limit keep their best-known solution but
    are labelled ``optimal: false``.
    """
    canon = to_canonical_min(inst)
    res = solve_milp(canon, cfg.label_limits)
    if res.incumbent is None:
        raise ConfigError(f"{inst.name}: no feasible solution found ({res.status})")
    dual = subgradient_solve(canon, cfg.subgradient_iters, schedule=POLYAK,
                             target=res.incumbent.objective)
    return {
        "name": inst.name,
        "status": res.status,
        "optimal": res.status == STATUS_OPTIMAL,
        "objective": res.incumbent.objective,
        "display_objective": display_objective(inst, res.incumbent.objective),
        "x": [float(v) for v in res.incumbent.x],
        "nodes": res.nodes,
        "lam": [float(v) for v in dual.lam],
        "dual_bound": dual.dual_bound,
    }


def label_instances(cfg: ExperimentConfig) -> Path:
    enc = init_encoder(cfg.train.token_dim, cfg.encoder_seed)
    for split, count in (("train", cfg.n_train), ("test", cfg.n_test)):
        for i in range(count):
            inst = read_instance(_item_path(cfg.root, "instances", split, i, ".json"))
            _write_json(_item_path(cfg.root, "labels", split, i, ".json"), label_instance(inst, cfg))
            tokens = encode(build_bipartite(to_canonical_min(inst)), enc).tokens
            path = _item_path(cfg.root, "embeddings", split, i, ".npy")
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, tokens)
    return cfg.root


def make_dataset(cfg: ExperimentConfig) -> Path:
    generate_instances(cfg)
    return label_instances(cfg)


@dataclass
class Record:
    index: int
    inst: MilpInstance  # as generated
    canon: MilpInstance
    label: dict
    tokens: np.ndarray


def load_split(root, split: str) -> list[Record]:
    root = Path(root)
    out = []
    paths = sorted((root / "instances" / split).glob("*.json"))
    if not paths:
        raise ConfigError(f"no {split} instances under {root}")
    for p in paths:
        i = int(p.stem)
        lp = _item_path(root, "labels", split, i, ".json")
        ep = _item_path(root, "embeddings", split, i, ".npy")
        if not lp.exists() or not ep.exists():
            raise ConfigError(f"{split} item {i} is not labelled; run `srg label`")
        inst = read_instance(p)
        out.append(Record(i, inst, to_canonical_min(inst), json.loads(lp.read_text()), np.load(ep)))
    return out


# ---------------------------------------------------------------- training

@dataclass
class Model:
    params: object
    encoder: dict
    train_cfg: TrainConfig
    losses: list = field(default_factory=list)

    @property
    def schedule(self):
        return self.train_cfg.schedule()


def train_model(cfg: ExperimentConfig, progress=None) -> Model:
    records = load_split(cfg.root, "train")
    items = [TrainItem(r.canon, np.asarray(r.label["x"]), np.asarray(r.label["lam"]),
                       r.tokens) for r in records]
    enc = init_encoder(cfg.train.token_dim, cfg.encoder_seed)
    params, losses = train(items, cfg.train, progress=progress, encoder_params=enc)
    ckdir = cfg.root / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckdir / "model.ckpt", params, enc,
                    {"train_config": cfg.train.to_dict(), "benchmark": cfg.benchmark})
    with open(ckdir / "losses.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "loss"])
        for e, v in enumerate(losses):
            wr.writerow([e, repr(float(v))])
    return Model(params, enc, cfg.train, losses)


def load_model(path) -> Model:
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoints" / "model.ckpt"
    if not path.exists():
        raise ConfigError(f"{path} not found; run `srg train` first")
    params, enc, extra = load_checkpoint(path)
    return Model(params, enc, TrainConfig.from_dict(extra["train_config"]))


# ----------------------------------------------------------------- solving

@dataclass
class SrgOutcome:
    result: SearchResult  # search on the trust-region subproblem (or fallback)
    solution: Solution | None  # final point, judged on the full instance
    candidates: list
    best: int
    repaired: Solution
    fallback: bool
    delta: int
    penalty_trajectory: list  # batch-mean P(x_t) per sampler state
    gen_seconds: float
    repair_seconds: float
    search_seconds: float


def solve_multipliers(canon: MilpInstance) -> np.ndarray:
    """Multipliers available at solve time: the LP duals (zero if the LP
    does not solve)."""
    lp = solve_lp(canon)
    return lp.duals if lp.status == OPTIMAL else np.zeros(canon.m)


def run_srg_solve(inst: MilpInstance, model, cfg: ExperimentConfig,
                  sample: SampleConfig | None = None, delta: int | None = None) -> SrgOutcome:
    """Generate candidates, repair the best, then search its trust region.

    If the repaired point is infeasible the unrestricted problem is solved
    with the same limits and the outcome is marked as a fallback.
    """
    if not isinstance(model, Model):
        model = load_model(model)
    canon = to_canonical_min(inst)
    sample = sample or cfg.sample
    delta = cfg.delta_for(canon) if delta is None else delta

    t0 = time.perf_counter()
    emb = encode(build_bipartite(canon), model.encoder)
    lam = solve_multipliers(canon)
    cands, best, traj = generate_diverse(model.params, emb, sample, canon, lam,
                                         model.schedule, return_trajectory=True)
    penalties = [float(np.mean(penalty_term(s, canon, lam))) for s in traj]
    t1 = time.perf_counter()
    repaired = repair_heuristic(canon, cands[best].x, cfg.repair_budget,
                                node_limit=cfg.repair_node_limit)
    t2 = time.perf_counter()
    if repaired.feasible:
        spec = TrustRegionSpec.around(canon, repaired.x, delta)
        res = solve_milp(add_trust_region(canon, spec), cfg.search_limits, incumbent=repaired.x)
        fallback = res.incumbent is None
    else:
        fallback = True
    if fallback:
        res = solve_milp(canon, cfg.search_limits)
    t3 = time.perf_counter()
    sol = None if res.incumbent is None else make_solution(canon, res.incumbent.x)
    return SrgOutcome(res, sol, cands, best, repaired, fallback, delta, penalties,
                      t1 - t0, t2 - t1, t3 - t2)


def gap_improvement(obj_baseline, obj_srg, obj_ref):
    """Percent reduction of the signed gap to a reference,
    ``(gap_base - gap_srg) / |gap_base| * 100`` with ``gap_m = obj_m - obj_ref``.

    Computed in decimal on the shortest float reprs, so values typed as
    decimals give exact percentages.  Returns None when the baseline gap is
    zero (undefined).
    """
    b, s, r = (Decimal(repr(float(v))) for v in (obj_baseline, obj_srg, obj_ref))
    gap_b = b - r
    if gap_b == 0:
        return None
    return float((gap_b - (s - r)) / abs(gap_b) * 100)


SOLUTION_COLUMNS = [
    "instance", "method", "status", "feasible", "fallback", "objective",
    "canonical_objective", "reference_objective", "canonical_reference", "nodes", "delta",
    "best_candidate_penalty", "gen_seconds", "repair_seconds", "search_seconds",
]
TRAJECTORY_COLUMNS = ["instance", "method", "nodes", "canonical_objective", "seconds"]
PENALTY_COLUMNS = ["instance", "step", "mean_penalty"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_fmt(r.get(c)) for c in columns])
    return path


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def solve_test_set(cfg: ExperimentConfig, model=None, methods=("baseline", "srg")) -> dict:
    """Baseline and guided solves of every test instance under identical
    search limits; writes solutions, trajectories and penalty logs."""
    model = model or load_model(cfg.root)
    records = load_split(cfg.root, "test")
    sol_rows, traj_rows, pen_rows = [], [], []
    fallbacks = 0
    for r in records:
        ref = (r.label["display_objective"], r.label["objective"])
        if "baseline" in methods:
            t0 = time.perf_counter()
            res = solve_milp(r.canon, cfg.search_limits)
            sol_rows.append(_solution_row(r, "baseline", res, res.incumbent, ref, False,
                                          search=time.perf_counter() - t0))
            traj_rows += _trajectory_rows(r.inst.name, "baseline", res)
        if "srg" in methods:
            out = run_srg_solve(r.inst, model, cfg, sample=cfg.sample_for(r.index))
            fallbacks += out.fallback
            sol_rows.append(_solution_row(
                r, "srg", out.result, out.solution, ref, out.fallback, delta=out.delta,
                penalty=out.candidates[out.best].penalty, gen=out.gen_seconds,
                repair=out.repair_seconds, search=out.search_seconds))
            traj_rows += _trajectory_rows(r.inst.name, "srg", out.result)
            pen_rows += [{"instance": r.inst.name, "step": k, "mean_penalty": p}
                         for k, p in enumerate(out.penalty_trajectory)]
    res_dir = cfg.root / "results"
    _write_csv(res_dir / "solutions.csv", SOLUTION_COLUMNS, sol_rows)
    _write_csv(res_dir / "trajectories.csv", TRAJECTORY_COLUMNS, traj_rows)
    _write_csv(res_dir / "penalty.csv", PENALTY_COLUMNS, pen_rows)
    return {"rows": sol_rows, "fallbacks": fallbacks}


def _solution_row(r: Record, method, res, sol, ref, fallback, delta=None, penalty=None,
                  gen=None, repair=None, search=None) -> dict:
    feasible = sol is not None and bool(sol.feasible)
    return {
        "instance": r.inst.name, "method": method, "status": res.status,
        "feasible": feasible, "fallback": fallback,
        "objective": display_objective(r.inst, sol.objective) if feasible else None,
        "canonical_objective": sol.objective if feasible else None,
        "reference_objective": ref[0], "canonical_reference": ref[1],
        "nodes": res.nodes, "delta": delta,
        "best_candidate_penalty": penalty, "gen_seconds": gen,
        "repair_seconds": repair, "search_seconds": search,
    }


def _trajectory_rows(name, method, res: SearchResult) -> list[dict]:
    return [{"instance": name, "method": method, "seconds": s, "nodes": n,
             "canonical_objective": v} for s, n, v in res.trajectory]


# -------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class MetricsRow:
    method: str
    count: int
    mean_objective: float | None
    std_objective: float | None
    mean_nodes: float
    feasibility_rate: float
    fallback_rate: float
    gap_improvement: float | None
    mean_search_seconds: float
    std_search_seconds: float


METRIC_COLUMNS = [f for f in MetricsRow.__dataclass_fields__]


def _mean_std(vals):
    if not vals:
        return None, None
    a = np.asarray(vals, dtype=float)
    return float(a.mean()), float(a.std())


def evaluate(rows: list[dict], methods, baseline: str = "baseline") -> list[MetricsRow]:
    """One row per method from solution records (dicts as in solutions.csv).

    Objectives are averaged over instances where the method is feasible.
    Gap improvement compares mean minimisation-form objectives against the
    baseline and the mean reference, so a positive value means the method
    is closer to the reference whatever the objective sense.
    """
    def num(v):
        return None if v in (None, "") else float(v)

    def flag(v):
        return v in (True, "1", 1)

    def canon_mean(rs, key):
        return _mean_std([num(r[key]) for r in rs])[0]

    out = []
    base_mean = None
    by_method = {m: [r for r in rows if r["method"] == m] for m in methods}
    if baseline in by_method:
        base_mean = canon_mean([r for r in by_method[baseline] if flag(r["feasible"])],
                               "canonical_objective")
    for m in methods:
        rs = by_method[m]
        if not rs:
            continue
        objs = [num(r["objective"]) for r in rs if flag(r["feasible"])]
        secs = [sum(num(r[k]) or 0.0 for k in ("gen_seconds", "repair_seconds", "search_seconds"))
                for r in rs]
        mo, so = _mean_std(objs)
        mc = canon_mean([r for r in rs if flag(r["feasible"])], "canonical_objective")
        ref = canon_mean(rs, "canonical_reference")
        gi = None
        if m != baseline and None not in (base_mean, mc, ref):
            gi = gap_improvement(base_mean, mc, ref)
        ms, ss = _mean_std(secs)
        out.append(MetricsRow(
            m, len(rs), mo, so, float(np.mean([num(r["nodes"]) for r in rs])),
            sum(flag(r["feasible"]) for r in rs) / len(rs),
            sum(flag(r["fallback"]) for r in rs) / len(rs), gi, ms, ss))
    return out


def write_metrics(path, metrics: list[MetricsRow]) -> Path:
    return _write_csv(Path(path), METRIC_COLUMNS, [asdict(m) for m in metrics])


def evaluate_run(cfg_or_root, methods=("baseline", "srg")) -> list[MetricsRow]:
    root = cfg_or_root.root if isinstance(cfg_or_root, ExperimentConfig) else Path(cfg_or_root)
    path = root / "results" / "solutions.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run `srg solve` first")
    metrics = evaluate(_read_csv(path), methods)
    write_metrics(root / "results" / "metrics.csv", metrics)
    emit_plots(root / "results")
    return metrics


def emit_plots(results_dir, max_instances: int = 4) -> dict:
    """Primal-bound trajectories (against B&B nodes) for the first test
    instances and per-step penalty curves.  Returns the plotted series."""
    results_dir = Path(results_dir)
    fig_dir = results_dir / "figures"
    plotted = {"primal": {}, "penalty": {}}
    traj = _read_csv(results_dir / "trajectories.csv")
    names = list(dict.fromkeys(r["instance"] for r in traj))[:max_instances]
    for name in names:
        series = {}
        for method in sorted({r["method"] for r in traj if r["instance"] == name}):
            pts = [(int(r["nodes"]), float(r["canonical_objective"])) for r in traj
                   if r["instance"] == name and r["method"] == method]
            series[method] = ([p[0] for p in pts], [p[1] for p in pts])
        plots.line_plot(series, fig_dir / f"primal_{name}.svg", f"best primal bound, {name}",
                        "branch-and-bound nodes", "objective (minimisation form)", step=True)
        plotted["primal"][name] = series
    pen_path = results_dir / "penalty.csv"
    pen = _read_csv(pen_path) if pen_path.exists() else []
    if pen:
        series = {}
        for name in dict.fromkeys(r["instance"] for r in pen):
            rs = [r for r in pen if r["instance"] == name]
            series[name] = ([int(r["step"]) for r in rs], [float(r["mean_penalty"]) for r in rs])
        plots.line_plot(series, fig_dir / "penalty.svg", "mean penalty along sampling",
                        "sampler step", "mean P(x)")
        plotted["penalty"] = series
    return plotted


# --------------------------------------------------------------------- toy

@dataclass(frozen=True)
class ToyConfig:
    n_train: int = 1000
    T: int = 50
    gamma_o: float = 0.1
    gamma_c: float = 0.3
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    n_samples: int = 64
    seed: int = 0
    sampler: str = DDIM_EARLYSTOP
    clip: bool = True
    train_encoder: bool = True
    out_dir: str | None = None


@dataclass
class ToyResult:
    distances: np.ndarray  # batch-mean distance to the optimum per sampler state
    optimum: np.ndarray
    samples: np.ndarray
    trajectory: list
    losses: list
    model: Model

    @property
    def reduction(self) -> float:
        return 1.0 - self.distances[-1] / self.distances[0]

    def monotone_tail(self, steps: int = 25) -> bool:
        return bool(np.all(np.diff(self.distances[-(steps + 1):]) < 0))


def toy_model(cfg: ToyConfig) -> Model:
    enc = init_encoder(32, cfg.seed)
    items = []
    for s in range(cfg.n_train):
        inst = gen_toy_2d_lp(derive_seed(cfg.seed, SPLITS["train"], s))
        lp = solve_lp(inst)
        if lp.status != OPTIMAL:
            raise ConfigError(f"toy LP {s} did not solve: {lp.status}")
        items.append(TrainItem(inst, lp.x, lp.duals, encode(build_bipartite(inst), enc).tokens))
    tcfg = TrainConfig(
        h=1, w=2, T=cfg.T, epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
        guidance=GuidanceConfig(cfg.gamma_o, cfg.gamma_c, convention=NOISE, exact_indicator=True),
        seed=cfg.seed, train_encoder=cfg.train_encoder,
    )
    params, losses = train(items, tcfg, encoder_params=enc)
    return Model(params, enc, tcfg, losses)


def toy_experiment(cfg: ToyConfig, model: Model | None = None) -> ToyResult:
    """Train on random 2D LPs, sample the fixed instance, and record how
    the sample cloud approaches its LP optimum."""
    model = model or toy_model(cfg)
    toy = fixed_toy_instance()
    lp = solve_lp(toy)
    emb = encode(build_bipartite(toy), model.encoder)
    seeds = [derive_seed(cfg.seed, _SAMPLE_STREAM, i) for i in range(cfg.n_samples)]
    box = (toy.lower, toy.upper) if cfg.clip else None
    if cfg.sampler == DDIM_EARLYSTOP:
        x, traj = sample_ddim_earlystop(model.params, emb, model.schedule, 0, seeds,
                                        return_trajectory=True, clip=box)
    else:
        x, traj = sample_ddpm(model.params, emb, model.schedule, seeds, return_trajectory=True,
                              clip=box)
    dist = np.array([np.linalg.norm(s - lp.x, axis=1).mean() for s in traj])
    res = ToyResult(dist, lp.x, x, traj, model.losses, model)
    if cfg.out_dir is not None:
        write_toy_outputs(res, cfg.out_dir)
    return res


def toy_polygon(inst: MilpInstance) -> np.ndarray:
    """Vertices of the 2D feasible region in counter-clockwise order."""
    A, b = inst.A, inst.b
    pts = []
    for i in range(inst.m):
        for j in range(i + 1, inst.m):
            M = A[[i, j]]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            p = np.linalg.solve(M, b[[i, j]])
            if np.all(A @ p >= b - 1e-9):
                pts.append(p)
    if not pts:
        return np.zeros((0, 2))
    pts = np.unique(np.round(pts, 12), axis=0)
    ctr = pts.mean(axis=0)
    return pts[np.argsort(np.arctan2(pts[:, 1] - ctr[1], pts[:, 0] - ctr[0]))]


def write_toy_outputs(res: ToyResult, out_dir) -> Path:
    out = Path(out_dir)
    _write_csv(out / "distance.csv", ["step", "mean_distance"],
               [{"step": k, "mean_distance": float(d)} for k, d in enumerate(res.distances)])
    _write_csv(out / "loss.csv", ["epoch", "loss"],
               [{"epoch": e, "loss": float(v)} for e, v in enumerate(res.losses)])
    n = len(res.trajectory) - 1
    picks = sorted(set(int(round(v)) for v in np.linspace(0, n, 5)))
    snaps = [(f"step {k}/{n}", res.trajectory[k]) for k in picks]
    plots.scatter_steps(snaps, res.optimum, out / "scatter.svg",
                        polygon=toy_polygon(fixed_toy_instance()))
    return out

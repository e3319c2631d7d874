"""Seeded benchmark generators: set cover, independent set, combinatorial
auction, capacitated facility location, and random 2D LPs.

Per-benchmark weight ranges (bid values, facility costs, demands) are our own
defaults; the set-cover cost range (up to 20) and the medium/large problem
shapes follow the standard benchmark setup.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from srg.milp import GE, LE, MAXIMIZE, MINIMIZE, MilpInstance

BENCHMARKS = ("set_cover", "mis", "ca", "cfl", "toy2d")


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    benchmark: str = "set_cover"
    seed: int = 0
    # set cover
    n_sets: int = 50
    n_elements: int = 40
    density: float = 0.1
    cost_range: tuple = (1, 20)
    integral_costs: bool = True
    max_retries: int = 100
    # independent set
    n_nodes: int = 50
    edge_prob: float = 0.1
    weighted: bool = False
    weight_range: tuple = (1, 10)
    # combinatorial auction
    n_bids: int = 50
    n_items: int = 30
    max_bundle: int = 4
    item_value_range: tuple = (1, 10)
    # capacitated facility location
    n_facilities: int = 5
    n_customers: int = 10
    demand_range: tuple = (5, 35)
    capacity_range: tuple = (10, 160)
    capacity_ratio: float = 2.0
    fixed_cost_range: tuple = (50, 150)
    # toy 2D LP
    toy_rows: int = 12

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise GeneratorError(f"unknown benchmark {self.benchmark!r}")
        counts = (self.n_sets, self.n_elements, self.n_nodes, self.n_bids,
                  self.n_items, self.max_bundle, self.n_facilities,
                  self.n_customers, self.toy_rows, self.max_retries)
        if min(counts) < 1:
            raise GeneratorError("all counts must be positive")
        for r in (self.cost_range, self.weight_range, self.item_value_range,
                  self.demand_range, self.capacity_range, self.fixed_cost_range):
            if r[0] > r[1]:
                raise GeneratorError(f"empty range {r}")
        if not 0.0 < self.edge_prob <= 1.0 or not 0.0 < self.density <= 1.0:
            raise GeneratorError("probabilities must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)

    def with_seed(self, seed: int) -> "GeneratorConfig":
        return replace(self, seed=int(seed))


# Problem shapes of the two standard scales.  MIS edge probability and CA
# item count are tuned to land near the reported constraint counts.
SCALE_PRESETS = {
    ("set_cover", "medium"): dict(n_sets=500, n_elements=1000, density=0.05),
    ("set_cover", "large"): dict(n_sets=1500, n_elements=2000, density=0.05),
    ("mis", "medium"): dict(n_nodes=500, edge_prob=0.0627),
    ("mis", "large"): dict(n_nodes=1500, edge_prob=0.0217),
    ("ca", "medium"): dict(n_bids=500, n_items=1095, max_bundle=8),
    ("ca", "large"): dict(n_bids=1500, n_items=2290, max_bundle=8),
    ("cfl", "medium"): dict(n_facilities=50, n_customers=50),
    ("cfl", "large"): dict(n_facilities=100, n_customers=100),
    # desk scale: small enough for exhaustive and restricted-enumeration oracles
    ("set_cover", "tiny"): dict(n_sets=50, n_elements=40, density=0.1),
    ("mis", "tiny"): dict(n_nodes=50, edge_prob=0.1),
    ("ca", "tiny"): dict(n_bids=40, n_items=25, max_bundle=4),
    ("cfl", "tiny"): dict(n_facilities=5, n_customers=8),
    ("set_cover", "micro"): dict(n_sets=10, n_elements=6, density=0.3),
    ("mis", "micro"): dict(n_nodes=12, edge_prob=0.3),
    ("ca", "micro"): dict(n_bids=8, n_items=5, max_bundle=3),
    ("cfl", "micro"): dict(n_facilities=3, n_customers=4),
}


def preset(benchmark: str, scale: str, seed: int = 0, **overrides) -> GeneratorConfig:
    try:
        sizes = SCALE_PRESETS[(benchmark, scale)]
    except KeyError:
        raise GeneratorError(f"no preset for {benchmark}/{scale}") from None
    return GeneratorConfig(benchmark=benchmark, seed=seed, **{**sizes, **overrides})


def _draw(rng, lo_hi, size, integral):
    lo, hi = lo_hi
    if integral:
        return rng.integers(int(lo), int(hi) + 1, size=size).astype(float)
    return rng.uniform(lo, hi, size=size)


def gen_set_cover(cfg: GeneratorConfig) -> MilpInstance:
    rng = np.random.default_rng(cfg.seed)
    n, m = cfg.n_sets, cfg.n_elements
    cover = rng.random((m, n)) < cfg.density
    for i in range(m):
        tries = 0
        while not cover[i].any():
            if tries >= cfg.max_retries:
                raise GeneratorError(f"element {i} uncovered after {tries} retries")
            cover[i] = rng.random(n) < cfg.density
            tries += 1
    c = _draw(rng, cfg.cost_range, n, cfg.integral_costs)
    return MilpInstance(
        c=c, A=cover.astype(float), b=np.ones(m), lower=np.zeros(n),
        upper=np.ones(n), integrality=np.ones(n, bool), sense=MINIMIZE,
        row_sense=GE * m, name=f"sc_n{n}_m{m}_s{cfg.seed}",
    )


def gen_max_independent_set(cfg: GeneratorConfig) -> MilpInstance:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_nodes
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < cfg.edge_prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    A = np.zeros((edges.shape[0], n))
    A[np.arange(edges.shape[0]), edges[:, 0]] = 1.0
    A[np.arange(edges.shape[0]), edges[:, 1]] = 1.0
    if cfg.weighted:
        w = _draw(rng, cfg.weight_range, n, True)
    else:
        w = np.ones(n)
    m = edges.shape[0]
    return MilpInstance(
        c=w, A=A, b=np.ones(m), lower=np.zeros(n), upper=np.ones(n),
        integrality=np.ones(n, bool), sense=MAXIMIZE, row_sense=LE * m,
        name=f"mis_n{n}_m{m}_s{cfg.seed}",
    )


def gen_combinatorial_auction(cfg: GeneratorConfig) -> MilpInstance:
    """Bids request random bundles; a bid is worth its items' base values times
    a per-bid premium in [1, 1.5], rounded to an integer."""
    rng = np.random.default_rng(cfg.seed)
    n_items = cfg.n_items
    base = _draw(rng, cfg.item_value_range, n_items, False)
    bundles = []
    values = []
    for _ in range(cfg.n_bids):
        size = int(rng.integers(1, min(cfg.max_bundle, n_items) + 1))
        items = np.sort(rng.choice(n_items, size=size, replace=False))
        bundles.append(items)
        values.append(max(1.0, float(np.round(base[items].sum() * rng.uniform(1.0, 1.5)))))
    incidence = np.zeros((n_items, cfg.n_bids))
    for j, items in enumerate(bundles):
        incidence[items, j] = 1.0
    incidence = incidence[incidence.any(axis=1)]
    m, n = incidence.shape
    return MilpInstance(
        c=np.array(values), A=incidence, b=np.ones(m), lower=np.zeros(n),
        upper=np.ones(n), integrality=np.ones(n, bool), sense=MAXIMIZE,
        row_sense=LE * m, name=f"ca_b{n}_i{m}_s{cfg.seed}",
    )


def gen_capacitated_facility(cfg: GeneratorConfig) -> MilpInstance:
    """Variables ordered ``y_1..y_F`` then ``x_ij`` row-major (facility i,
    customer j).  Rows: demand coverage, capacity, linking."""
    rng = np.random.default_rng(cfg.seed)
    F, C = cfg.n_facilities, cfg.n_customers
    demand = _draw(rng, cfg.demand_range, C, True)
    capacity = _draw(rng, cfg.capacity_range, F, True)
    # scale capacities so total capacity is capacity_ratio x total demand
    capacity = np.ceil(capacity * cfg.capacity_ratio * demand.sum() / capacity.sum())
    fixed = _draw(rng, cfg.fixed_cost_range, F, True)
    fac_xy = rng.random((F, 2))
    cus_xy = rng.random((C, 2))
    dist = np.linalg.norm(fac_xy[:, None, :] - cus_xy[None, :, :], axis=2)
    transport = np.round(10.0 * dist * demand[None, :], 2)
    return build_cfl(fixed, transport, demand, capacity, name=f"cfl_f{F}_c{C}_s{cfg.seed}")


def build_cfl(fixed, transport, demand, capacity, name="cfl") -> MilpInstance:
    fixed = np.asarray(fixed, float)
    transport = np.asarray(transport, float)
    demand = np.asarray(demand, float)
    capacity = np.asarray(capacity, float)
    F, C = transport.shape
    n = F + F * C

    def xi(i, j):
        return F + i * C + j

    rows, rhs, sense = [], [], []
    for j in range(C):
        r = np.zeros(n)
        r[[xi(i, j) for i in range(F)]] = 1.0
        rows.append(r), rhs.append(1.0), sense.append(GE)
    for i in range(F):
        r = np.zeros(n)
        r[[xi(i, j) for j in range(C)]] = demand
        r[i] = -capacity[i]
        rows.append(r), rhs.append(0.0), sense.append(LE)
    for i in range(F):
        for j in range(C):
            r = np.zeros(n)
            r[xi(i, j)] = 1.0
            r[i] = -1.0
            rows.append(r), rhs.append(0.0), sense.append(LE)
    c = np.concatenate([fixed, transport.reshape(-1)])
    integrality = np.zeros(n, bool)
    integrality[:F] = True
    return MilpInstance(
        c=c, A=np.array(rows), b=np.array(rhs), lower=np.zeros(n),
        upper=np.ones(n), integrality=integrality, sense=MINIMIZE,
        row_sense="".join(sense), name=name,
    )


TOY_C = (2.0828, 4.0374)
TOY_ROWS = (
    (-0.9915, 0.1300, -0.6248),
    (-0.8228, -0.5683, -0.9940),
    (-0.4874, -0.8732, -0.8212),
    (+0.0760, -0.9971, -0.6067),
    (+0.4869, -0.8735, -0.4103),
    (+0.9011, -0.4335, +0.0208),
    (+1.0000, -0.0052, +0.1056),
    (+0.8423, +0.5390, +0.3568),
    (+0.5048, +0.8632, +0.2732),
    (-0.0174, +0.9998, +0.0117),
    (-0.4281, +0.9037, -0.1279),
    (-0.8852, +0.4653, -0.4563),
    (+1.0000, +0.0000, +0.0000),
    (+0.0000, +1.0000, +0.0000),
    (-1.0000, +0.0000, -1.0000),
    (+0.0000, -1.0000, -1.0000),
)


def fixed_toy_instance() -> MilpInstance:
    """The fixed 16-row 2D LP used to visualise the sampler."""
    rows = np.array(TOY_ROWS)
    return MilpInstance(
        c=np.array(TOY_C), A=rows[:, :2], b=rows[:, 2], lower=np.zeros(2),
        upper=np.ones(2), integrality=np.zeros(2, bool), sense=MINIMIZE,
        row_sense=GE * 16, name="toy2d_fixed",
    )


def gen_toy_2d_lp(seed: int, n_rows: int = 12) -> MilpInstance:
    """Random polygon LP over [0,1]^2.

    Inward unit normals at jittered, evenly spaced angles around a random
    centre; each half-plane keeps the centre at a random positive margin.
    The four box rows are appended as in the fixed instance.
    Objective costs are positive, so optima sit on the lower-left boundary.
    """
    rng = np.random.default_rng(seed)
    center = rng.uniform(0.3, 0.7, size=2)
    angles = (np.arange(n_rows) + rng.uniform(-0.3, 0.3, n_rows)) * (2 * np.pi / n_rows)
    angles += rng.uniform(0, 2 * np.pi)
    normals = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    margin = rng.uniform(0.15, 0.45, size=n_rows)
    rhs = normals @ center - margin
    box = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    A = np.vstack([normals, box])
    b = np.concatenate([rhs, [0.0, 0.0, -1.0, -1.0]])
    c = rng.uniform(0.5, 5.0, size=2)
    return MilpInstance(
        c=c, A=A, b=b, lower=np.zeros(2), upper=np.ones(2),
        integrality=np.zeros(2, bool), sense=MINIMIZE,
        row_sense=GE * A.shape[0], name=f"toy2d_s{seed}",
    )


_GENERATORS = {
    "set_cover": gen_set_cover,
    "mis": gen_max_independent_set,
    "ca": gen_combinatorial_auction,
    "cfl": gen_capacitated_facility,
    "toy2d": lambda cfg: gen_toy_2d_lp(cfg.seed, cfg.toy_rows),
}


def generate(cfg: GeneratorConfig) -> MilpInstance:
    return _GENERATORS[cfg.benchmark](cfg)

"""Exact LP-based branch and bound, the Hamming trust region, and the
fix-and-optimize repair heuristic.

Node selection is best-bound, but the search plunges depth-first from the
root until the first incumbent appears.  Branching picks the most fractional
integer variable (lowest index on ties).  With node-based limits the search
is bit-deterministic; time limits are honoured but make runs irreproducible.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from srg.milp import (
    INT_TOL,
    GE,
    MilpInstance,
    Solution,
    infeasible_solution,
    is_feasible,
    make_solution,
    snap_integers,
)
from srg.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LpLimits, solve_lp

STATUS_OPTIMAL = "optimal"
STATUS_FEASIBLE = "feasible"
STATUS_INFEASIBLE = "infeasible"
STATUS_LIMIT = "limit_hit"


class NumericalError(RuntimeError):
    """The LP engine failed at a node; no result is trustworthy."""


@dataclass(frozen=True)
class SolveLimits:
    time_limit: float = math.inf
    node_limit: int | float = math.inf
    gap_tolerance: float = 1e-4

    def __post_init__(self):
        if self.time_limit < 0 or self.node_limit < 0 or self.gap_tolerance < 0:
            raise ValueError("limits must be nonnegative")
        if math.isinf(self.time_limit) and math.isinf(self.node_limit):
            raise ValueError("at least one of time_limit/node_limit must be finite")


@dataclass
class SearchResult:
    status: str
    incumbent: Solution | None
    nodes: int
    wall_time: float
    dual_bound: float
    # (seconds, nodes, best primal bound) at every incumbent improvement
    trajectory: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.incumbent.objective if self.incumbent is not None else math.inf

    def to_dict(self, include_x: bool = True) -> dict:
        inc = self.incumbent
        d = {
            "status": self.status,
            "objective": None if inc is None else inc.objective,
            "feasible": False if inc is None else bool(inc.feasible),
            "nodes": self.nodes,
            "wall_time": self.wall_time,
            "dual_bound": None if math.isinf(self.dual_bound) else self.dual_bound,
            "trajectory": [list(p) for p in self.trajectory],
        }
        if include_x and inc is not None:
            d["x"] = [float(v) for v in inc.x]
        return d


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


def _objective_is_integral(inst: MilpInstance) -> bool:
    cont = ~inst.integrality
    if np.any(inst.c[cont] != 0):
        return False
    ci = inst.c[inst.integrality]
    return bool(np.all(ci == np.round(ci)))


def _most_fractional(x, int_idx):
    if int_idx.size == 0:
        return -1, 0.0
    v = x[int_idx]
    frac = v - np.floor(v)
    dist = np.minimum(frac, 1.0 - frac)
    if dist.max() <= INT_TOL:
        return -1, 0.0
    k = int(np.argmax(dist))  # first maximum == lowest index on ties
    return int(int_idx[k]), float(frac[k])


def solve_milp(inst: MilpInstance, limits: SolveLimits | None = None,
               incumbent=None, lp_limits: LpLimits | None = None) -> SearchResult:
    """Branch and bound on a canonical-min instance.

    ``incumbent`` optionally warm-starts the primal bound with a known
    feasible point (e.g. a repaired prediction).
    """
    if not inst.is_canonical:
        raise ValueError("solve_milp expects a canonical-min instance")
    limits = limits or SolveLimits(node_limit=100000)
    start = time.perf_counter()
    int_idx = inst.int_indices
    integral_obj = _objective_is_integral(inst)

    best: Solution | None = None
    trajectory = []

    def elapsed():
        return time.perf_counter() - start

    def accept(x, nodes):
        nonlocal best
        x = snap_integers(inst, x)
        sol = make_solution(inst, x)
        if not sol.feasible:
            return False
        if best is None or sol.objective < best.objective - 1e-12:
            best = sol
            trajectory.append((elapsed(), nodes, sol.objective))
            return True
        return False

    if incumbent is not None:
        accept(np.asarray(incumbent, float), 0)

    def cutoff():
        if best is None:
            return math.inf
        tol = limits.gap_tolerance * max(1.0, abs(best.objective))
        return best.objective - max(tol, 1e-9)

    def effective(bound):
        if integral_obj and math.isfinite(bound):
            return math.ceil(bound - 1e-6)
        return bound

    heap: list[_Node] = []
    seq = 0
    nodes = 0
    root = _Node(-math.inf, seq, np.array(inst.lower), np.array(inst.upper))
    current: _Node | None = root
    limit_hit = False

    while True:
        if current is None:
            while heap and effective(heap[0].bound) >= cutoff():
                heapq.heappop(heap)  # pruned by bound
            if not heap:
                break
            current = heapq.heappop(heap)
        if nodes >= limits.node_limit or elapsed() >= limits.time_limit:
            heapq.heappush(heap, current)
            limit_hit = True
            break
        node, current = current, None
        nodes += 1
        lp = solve_lp(inst, lp_limits, lower=node.lower, upper=node.upper)
        if lp.status == INFEASIBLE:
            continue
        if lp.status == UNBOUNDED:
            if nodes == 1:
                raise NumericalError("LP relaxation unbounded at the root")
            continue
        if lp.status != OPTIMAL:
            raise NumericalError(f"LP status {lp.status!r} at node {nodes}")
        bound = lp.objective
        if effective(bound) >= cutoff():
            continue
        j, frac = _most_fractional(lp.x, int_idx)
        if j < 0:
            accept(lp.x, nodes)
            continue
        v = lp.x[j]
        down_hi = node.upper.copy()
        down_hi[j] = math.floor(v)
        up_lo = node.lower.copy()
        up_lo[j] = math.ceil(v)
        down = _Node(bound, seq + 1, node.lower, down_hi, node.depth + 1)
        up = _Node(bound, seq + 2, up_lo, node.upper, node.depth + 1)
        seq += 2
        if best is None:
            # plunge toward the nearer rounding; keep the sibling for later
            first, second = (up, down) if frac >= 0.5 else (down, up)
            heapq.heappush(heap, second)
            current = first
        else:
            heapq.heappush(heap, down)
            heapq.heappush(heap, up)

    open_bound = min((n.bound for n in heap), default=math.inf)
    if best is None:
        status = STATUS_LIMIT if limit_hit else STATUS_INFEASIBLE
        dual = open_bound if limit_hit else math.inf
    else:
        dual = min(open_bound, best.objective)
        gap = abs(best.objective - dual) / max(1.0, abs(best.objective))
        status = STATUS_OPTIMAL if (not limit_hit or gap <= limits.gap_tolerance) else STATUS_FEASIBLE
        if not limit_hit:
            dual = best.objective if not heap else dual
    return SearchResult(status, best, nodes, elapsed(), dual, trajectory)


@dataclass(frozen=True)
class TrustRegionSpec:
    """Hamming ball over the integer indices: ``center`` has one 0/1 entry per
    integer-masked variable (in index order), ``radius`` bounds the number of
    flips."""

    center: np.ndarray
    radius: int

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        if np.any((center != 0) & (center != 1)):
            raise ValueError("trust-region center must be binary")
        if self.radius < 0 or int(self.radius) != self.radius:
            raise ValueError("radius must be a nonnegative integer")
        if self.radius > center.size:
            raise ValueError("radius exceeds the number of integer variables")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", int(self.radius))

    @classmethod
    def around(cls, inst: MilpInstance, x, radius: int) -> "TrustRegionSpec":
        """Center taken from the integer coordinates of a full-length point."""
        x = np.asarray(x, float)
        radius = min(int(radius), inst.int_indices.size)
        return cls(np.round(x[inst.int_indices]), radius)


def add_trust_region(inst: MilpInstance, spec: TrustRegionSpec) -> MilpInstance:
    """Append ``sum_{c=0} x_i + sum_{c=1} (1 - x_i) <= radius`` as a ``>=`` row."""
    idx = inst.int_indices
    if spec.center.size != idx.size:
        raise ValueError("center length must equal the number of integer variables")
    if not inst.is_binary:
        raise ValueError("the Hamming trust region needs binary integer variables")
    row = np.zeros(inst.n)
    row[idx] = np.where(spec.center == 1, 1.0, -1.0)
    rhs = float(spec.center.sum() - spec.radius)
    return inst.replace(
        A=np.vstack([inst.A, row[None, :]]),
        b=np.concatenate([inst.b, [rhs]]),
        row_sense=inst.row_sense + GE,
        name=inst.name + f"_tr{spec.radius}",
    )


def hamming_distance(inst: MilpInstance, x, y) -> int:
    idx = inst.int_indices
    return int(np.sum(np.round(np.asarray(x)[idx]) != np.round(np.asarray(y)[idx])))


def repair_heuristic(inst: MilpInstance, x_relaxed, budget: float = 1.0,
                     fix_fraction: float = 0.8, min_rounds: int = 3,
                     node_limit: int = 2000) -> Solution:
    """Fix-and-optimize repair of a relaxed prediction.

    Integer coordinates are rounded and clipped; the ``fix_fraction`` most
    confident ones (closest to their rounding) are fixed and the rest is
    solved exactly.  When the restricted problem is infeasible the fixed
    fraction is halved, at least ``min_rounds`` times, ending with a fully
    free solve.  Returns an explicit infeasible report if nothing is found.
    """
    x = np.asarray(x_relaxed, dtype=float).reshape(-1)
    if x.shape[0] != inst.n:
        raise ValueError("x_relaxed has the wrong length")
    if not inst.is_canonical:
        raise ValueError("repair_heuristic expects a canonical-min instance")
    if np.all(np.isfinite(x)) and is_feasible(inst, x):
        return make_solution(inst, x, repaired=False, rounds=0)
    start = time.perf_counter()
    idx = inst.int_indices
    lo, hi = inst.lower, inst.upper
    xr = np.where(np.isfinite(x), x, 0.0)
    xr = np.minimum(np.maximum(xr, lo), hi)
    rounded = np.clip(np.round(xr[idx]), lo[idx], hi[idx])
    confidence = np.abs(xr[idx] - np.round(xr[idx]))
    order = np.argsort(confidence, kind="stable")  # most confident first

    fractions = [fix_fraction / 2 ** k for k in range(min_rounds)]
    fractions = [f for f in fractions if f > 0] + [0.0]
    for rnd, frac in enumerate(fractions, start=1):
        remaining = budget - (time.perf_counter() - start)
        if remaining <= 0 and rnd > 1:
            break
        k = int(math.floor(frac * idx.size))
        fixed = idx[order[:k]]
        new_lo = np.array(lo)
        new_hi = np.array(hi)
        new_lo[fixed] = rounded[order[:k]]
        new_hi[fixed] = rounded[order[:k]]
        sub = inst.replace(lower=new_lo, upper=new_hi)
        res = solve_milp(sub, SolveLimits(time_limit=max(remaining, 1e-3),
                                          node_limit=node_limit, gap_tolerance=1e-9))
        if res.incumbent is not None:
            return make_solution(inst, res.incumbent.x, repaired=True, rounds=rnd,
                                 fixed_fraction=frac)
    return infeasible_solution(inst, "repair budget exhausted without a feasible point")

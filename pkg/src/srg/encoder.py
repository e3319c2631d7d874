"""Bipartite variable/constraint graph and a two half-layer message-passing
encoder that turns it into one condition token per variable."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from srg import autodiff as ad
from srg.milp import MilpInstance

# Frozen feature lists; infinite bounds are encoded as 0 plus a has_* flag.
VARIABLE_FEATURES = (
    "cost", "cost_normalized", "lower", "has_lower", "upper", "has_upper",
    "is_integer", "degree",
)
CONSTRAINT_FEATURES = ("rhs", "row_norm", "degree")


@dataclass(frozen=True)
class BipartiteGraph:
    var_features: np.ndarray  # n x len(VARIABLE_FEATURES)
    con_features: np.ndarray  # m x len(CONSTRAINT_FEATURES)
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    name: str = ""

    @property
    def n(self) -> int:
        return self.var_features.shape[0]

    @property
    def m(self) -> int:
        return self.con_features.shape[0]

    def dense(self) -> np.ndarray:
        A = np.zeros((self.m, self.n))
        A[self.rows, self.cols] = self.vals
        return A

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "var_features": self.var_features.tolist(),
            "con_features": self.con_features.tolist(),
            "rows": self.rows.tolist(), "cols": self.cols.tolist(),
            "vals": self.vals.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BipartiteGraph":
        nv, nc = len(VARIABLE_FEATURES), len(CONSTRAINT_FEATURES)
        return cls(
            np.asarray(d["var_features"], float).reshape(-1, nv),
            np.asarray(d["con_features"], float).reshape(-1, nc),
            np.asarray(d["rows"], int), np.asarray(d["cols"], int),
            np.asarray(d["vals"], float), d.get("name", ""),
        )

    def equals(self, other: "BipartiteGraph") -> bool:
        return self.name == other.name and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("var_features", "con_features", "rows", "cols", "vals"))


@dataclass(frozen=True)
class ConditionEmbedding:
    tokens: np.ndarray  # n x D
    instance_id: str = ""

    def __post_init__(self):
        if self.tokens.ndim != 2 or not np.all(np.isfinite(self.tokens)):
            raise ValueError("tokens must be a finite L x D matrix")

    @property
    def L(self) -> int:
        return self.tokens.shape[0]

    @property
    def D(self) -> int:
        return self.tokens.shape[1]


def build_bipartite(inst: MilpInstance) -> BipartiteGraph:
    A = inst.A
    rows, cols = np.nonzero(A)
    vals = A[rows, cols]
    c = inst.c
    cmax = max(float(np.abs(c).max(initial=0.0)), 1e-12)
    lo, hi = inst.lower, inst.upper
    var = np.stack([
        c, c / cmax,
        np.where(np.isfinite(lo), lo, 0.0), np.isfinite(lo).astype(float),
        np.where(np.isfinite(hi), hi, 0.0), np.isfinite(hi).astype(float),
        inst.integrality.astype(float), (A != 0).sum(axis=0).astype(float),
    ], axis=1)
    con = np.stack([
        inst.b, np.linalg.norm(A, axis=1), (A != 0).sum(axis=1).astype(float),
    ], axis=1).reshape(inst.m, len(CONSTRAINT_FEATURES))
    return BipartiteGraph(var, con, rows, cols, vals, inst.name)


def init_encoder(D: int = 32, seed: int = 0, dtype=np.float32) -> dict:
    """Uniform fan-in initialisation, zero biases."""
    rng = np.random.default_rng(seed)
    nv, nc = len(VARIABLE_FEATURES), len(CONSTRAINT_FEATURES)
    shapes = {
        "W_var": (nv, D), "W_con": (nc, D), "W_cc": (D, D), "W_vc": (D, D),
        "W_vv": (D, D), "W_cv": (D, D),
    }
    p = {}
    for k, s in shapes.items():
        bound = 1.0 / np.sqrt(s[0])
        p[k] = rng.uniform(-bound, bound, size=s).astype(dtype)
    for k in ("b_var", "b_con", "b_c", "b_out"):
        p[k] = np.zeros(D, dtype)
    return p


def _aggregators(graph: BipartiteGraph):
    """Weighted mean operators: constraint <- variables and variable <-
    constraints, weights A_ij normalised by the row/column sum of |A_ij|."""
    A = graph.dense()
    absA = np.abs(A)
    row = absA.sum(axis=1, keepdims=True)
    col = absA.sum(axis=0, keepdims=True)
    to_con = np.divide(A, row, out=np.zeros_like(A), where=row > 0)
    to_var = np.divide(A, col, out=np.zeros_like(A), where=col > 0).T
    return to_con, to_var


def _stacked(graphs):
    """Features and block-diagonal aggregators of several graphs, so one
    pass encodes a whole batch."""
    aggs = [_aggregators(g) for g in graphs]
    ns = np.cumsum([0] + [g.n for g in graphs])
    ms = np.cumsum([0] + [g.m for g in graphs])
    to_con = np.zeros((ms[-1], ns[-1]))
    to_var = np.zeros((ns[-1], ms[-1]))
    for k, (tc, tv) in enumerate(aggs):
        to_con[ms[k]:ms[k + 1], ns[k]:ns[k + 1]] = tc
        to_var[ns[k]:ns[k + 1], ms[k]:ms[k + 1]] = tv
    xv = np.concatenate([g.var_features for g in graphs])
    xc = np.concatenate([g.con_features for g in graphs])
    return xv, xc, to_con, to_var


def encode_tensor(graph, tp: dict) -> ad.Tensor:
    """Differentiable forward pass; ``tp`` maps names to Tensors.

    ``graph`` may also be a list of graphs, in which case the token rows of
    all graphs are returned stacked in order.
    """
    dtype = tp["W_var"].data.dtype
    graphs = graph if isinstance(graph, (list, tuple)) else [graph]
    xv, xc, to_con, to_var = _stacked(graphs)
    to_con, to_var = to_con.astype(dtype), to_var.astype(dtype)
    xv = ad.const(xv.astype(dtype))
    xc = ad.const(xc.astype(dtype))
    hv = ad.silu(ad.add(ad.matmul(xv, tp["W_var"]), tp["b_var"]))
    hc = ad.silu(ad.add(ad.matmul(xc, tp["W_con"]), tp["b_con"]))
    # variables -> constraints
    msg_c = ad.matmul(ad.const(to_con), hv)
    hc = ad.silu(ad.add(ad.add(ad.matmul(hc, tp["W_cc"]), ad.matmul(msg_c, tp["W_vc"])), tp["b_c"]))
    # constraints -> variables
    msg_v = ad.matmul(ad.const(to_var), hc)
    return ad.add(ad.add(ad.matmul(hv, tp["W_vv"]), ad.matmul(msg_v, tp["W_cv"])), tp["b_out"])


def encode(graph: BipartiteGraph, params: dict) -> ConditionEmbedding:
    D = params["b_out"].shape[0]
    for k, v in params.items():
        if v.shape[-1] != D:
            raise ValueError(f"encoder parameter {k} has width {v.shape[-1]}, expected {D}")
    tp = {k: ad.const(v) for k, v in params.items()}
    tokens = encode_tensor(graph, tp).data
    return ConditionEmbedding(np.asarray(tokens, dtype=np.float32), graph.name)

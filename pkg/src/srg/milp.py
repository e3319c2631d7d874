"""MILP data model and evaluation helpers.

Every instance stores ``min/max c.x`` subject to rows ``A_i x (>=|<=) b_i``,
box bounds and an integrality mask.  Downstream modules work on the canonical
orientation (minimize, all rows ``>=``) produced by :func:`to_canonical_min`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MINIMIZE = "minimize"
MAXIMIZE = "maximize"
GE = "G"
LE = "L"

INT_TOL = 1e-6


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MilpInstance:
    """A mixed-integer linear program.

    ``A`` is dense (m x n).  ``row_sense`` holds one character per row,
    ``"G"`` for ``>=`` and ``"L"`` for ``<=``.  Infinite bounds are stored as
    ``+-np.inf``.
    """

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integrality: np.ndarray
    sense: str = MINIMIZE
    row_sense: str = ""
    name: str = "milp"

    def __post_init__(self):
        c = _frozen(self.c).reshape(-1)
        n = c.shape[0]
        A = _frozen(self.A)
        if A.size == 0:
            A = _frozen(np.zeros((0, n)))
        b = _frozen(self.b).reshape(-1)
        m = b.shape[0]
        if A.shape != (m, n):
            raise ValueError(f"A has shape {A.shape}, expected {(m, n)}")
        lower = _frozen(self.lower).reshape(-1)
        upper = _frozen(self.upper).reshape(-1)
        integrality = _frozen(self.integrality, dtype=bool).reshape(-1)
        for label, vec in (("lower", lower), ("upper", upper), ("integrality", integrality)):
            if vec.shape[0] != n:
                raise ValueError(f"{label} has length {vec.shape[0]}, expected {n}")
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(np.isnan(c)) or np.any(np.isnan(A)) or np.any(np.isnan(b)):
            raise ValueError("NaN coefficient")
        row_sense = self.row_sense or GE * m
        if len(row_sense) != m or set(row_sense) - {GE, LE}:
            raise ValueError("row_sense must hold one of 'G'/'L' per row")
        if self.sense not in (MINIMIZE, MAXIMIZE):
            raise ValueError(f"unknown sense {self.sense!r}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "integrality", integrality)
        object.__setattr__(self, "row_sense", row_sense)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def int_indices(self) -> np.ndarray:
        return np.flatnonzero(self.integrality)

    @property
    def is_canonical(self) -> bool:
        return self.sense == MINIMIZE and LE not in self.row_sense

    @property
    def is_binary(self) -> bool:
        idx = self.int_indices
        return bool(np.all(self.lower[idx] >= 0) and np.all(self.upper[idx] <= 1))

    def replace(self, **changes) -> "MilpInstance":
        fields = dict(
            c=self.c, A=self.A, b=self.b, lower=self.lower, upper=self.upper,
            integrality=self.integrality, sense=self.sense,
            row_sense=self.row_sense, name=self.name,
        )
        fields.update(changes)
        return MilpInstance(**fields)

    def equals(self, other: "MilpInstance") -> bool:
        """Exact (bitwise) equality of every field."""
        return (
            self.name == other.name
            and self.sense == other.sense
            and self.row_sense == other.row_sense
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("c", "A", "b", "lower", "upper", "integrality")
            )
        )


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    objective: float
    feasible: bool
    max_violation: float
    info: dict = field(default_factory=dict, compare=False)


def _check_x(inst: MilpInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != inst.n:
        raise ValueError(f"x has length {x.shape[0]}, instance has n={inst.n}")
    return x


def evaluate_objective(inst: MilpInstance, x) -> float:
    """``c.x`` in the instance's own sense convention."""
    x = _check_x(inst, x)
    return float(inst.c @ x)


def violation_vector(inst: MilpInstance, x) -> np.ndarray:
    """Elementwise positive part of the row violations, ``max(b - Ax, 0)`` for
    ``>=`` rows (and ``max(Ax - b, 0)`` for any ``<=`` row)."""
    x = _check_x(inst, x)
    if inst.m == 0:
        return np.zeros(0)
    gap = inst.b - inst.A @ x
    if LE in inst.row_sense:
        flip = np.frombuffer(inst.row_sense.encode(), dtype="S1") == LE.encode()
        gap = np.where(flip, -gap, gap)
    return np.maximum(gap, 0.0)


def bound_violation(inst: MilpInstance, x) -> float:
    x = _check_x(inst, x)
    below = np.maximum(inst.lower - x, 0.0)
    above = np.maximum(x - inst.upper, 0.0)
    return float(max(below.max(initial=0.0), above.max(initial=0.0)))


def integrality_violation(inst: MilpInstance, x) -> float:
    x = _check_x(inst, x)
    idx = inst.int_indices
    if idx.size == 0:
        return 0.0
    return float(np.abs(x[idx] - np.round(x[idx])).max())


def is_feasible(inst: MilpInstance, x, tol: float = 1e-6) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    viol = violation_vector(inst, x)
    return bool(
        viol.max(initial=0.0) <= tol
        and bound_violation(inst, x) <= tol
        and integrality_violation(inst, x) <= tol
    )


def make_solution(inst: MilpInstance, x, tol: float = 1e-6, **info) -> Solution:
    x = np.array(_check_x(inst, x), dtype=float)
    x.setflags(write=False)
    viol = violation_vector(inst, x).max(initial=0.0)
    return Solution(
        x=x,
        objective=evaluate_objective(inst, x),
        feasible=is_feasible(inst, x, tol),
        max_violation=float(max(viol, bound_violation(inst, x))),
        info=info,
    )


def infeasible_solution(inst: MilpInstance, reason: str) -> Solution:
    """Explicit 'nothing found' report."""
    x = np.full(inst.n, np.nan)
    x.setflags(write=False)
    return Solution(x=x, objective=float("nan"), feasible=False,
                    max_violation=float("inf"), info={"reason": reason})


def to_canonical_min(inst: MilpInstance) -> MilpInstance:
    """Minimization with every row in ``Ax >= b`` orientation.  Idempotent."""
    if inst.is_canonical:
        return inst
    c = -inst.c if inst.sense == MAXIMIZE else inst.c
    A = np.array(inst.A)
    b = np.array(inst.b)
    for i, s in enumerate(inst.row_sense):
        if s == LE:
            A[i] = -A[i]
            b[i] = -b[i]
    # avoid -0.0 so canonicalization is bitwise stable through JSON
    A += 0.0
    b += 0.0
    c = c + 0.0
    return inst.replace(c=c, A=A, b=b, sense=MINIMIZE, row_sense=GE * inst.m)


def display_objective(original: MilpInstance, canonical_value: float) -> float:
    """Map a canonical-min objective back to the original instance's sense."""
    return -canonical_value if original.sense == MAXIMIZE else canonical_value


def snap_integers(inst: MilpInstance, x, tol: float = INT_TOL) -> np.ndarray:
    """Round integer-masked coordinates that are within ``tol`` of an integer."""
    x = np.array(x, dtype=float)
    idx = inst.int_indices
    r = np.round(x[idx])
    close = np.abs(x[idx] - r) <= tol
    x[idx[close]] = r[close] + 0.0
    return x

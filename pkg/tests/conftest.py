"""Independent oracles shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from srg.milp import MilpInstance


def brute_force(inst: MilpInstance):
    """Exact optimum of a small canonical-min instance by enumerating every
    integer assignment; continuous variables (if any) are handled by an LP
    per assignment.  Returns (objective, x) or (inf, None)."""
    idx = inst.int_indices
    cont = np.flatnonzero(~inst.integrality)
    ranges = [range(int(np.ceil(inst.lower[j])), int(np.floor(inst.upper[j])) + 1) for j in idx]
    if cont.size == 0:
        X = np.array(list(itertools.product(*ranges)), dtype=float).reshape(-1, inst.n)
        ok = np.all(X @ inst.A.T >= inst.b - 1e-9, axis=1)
        if not ok.any():
            return np.inf, None
        vals = np.where(ok, X @ inst.c, np.inf)
        k = int(np.argmin(vals))
        return float(vals[k]), X[k]
    best, best_x = np.inf, None
    for combo in itertools.product(*ranges):
        x = np.zeros(inst.n)
        x[idx] = combo
        rhs = inst.b - inst.A[:, idx] @ np.asarray(combo, float)
        res = linprog(inst.c[cont], A_ub=-inst.A[:, cont], b_ub=-rhs,
                      bounds=list(zip(inst.lower[cont], inst.upper[cont])), method="highs")
        if res.status == 0:
            v = float(inst.c[idx] @ np.asarray(combo, float) + res.fun)
            if v < best:
                x[cont] = res.x
                best, best_x = v, x
    return best, best_x


def linprog_oracle(inst: MilpInstance):
    """LP relaxation by HiGHS: (status, objective).  Status 0 optimal,
    2 infeasible, 3 unbounded."""
    bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
              for lo, hi in zip(inst.lower, inst.upper)]
    res = linprog(inst.c, A_ub=-inst.A if inst.m else None, b_ub=-inst.b if inst.m else None,
                  bounds=bounds, method="highs")
    return res.status, (float(res.fun) if res.status == 0 else None)


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of a scalar function of an array by central differences."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gradient_error(build, arrays: dict, rng, h: float = 1e-6) -> float:
    """Largest relative error between the autodiff gradient of
    ``sum(R * build(leaves))`` and its central differences, over all inputs.

    ``build`` maps a dict of Tensors to an output Tensor; ``R`` is a fixed
    random weighting so every output entry matters.
    """
    from srg import autodiff as ad

    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    leaves = {k: ad.leaf(v) for k, v in arrays.items()}
    out = build(leaves)
    R = rng.standard_normal(out.shape)
    out.backward(R)

    def f():
        return float(np.sum(R * build({n: ad.const(a) for n, a in arrays.items()}).data))

    worst = 0.0
    for k, arr in arrays.items():
        fd = central_difference(f, arr, h)
        got = leaves[k].grad if leaves[k].grad is not None else np.zeros_like(arr)
        worst = max(worst, rel_error(got, fd))
    return worst


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line and print it; the lines are repeated in
    the terminal summary so they show up without ``-s``."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

"""Lagrangian relaxation over the box, the subgradient method, and the
quality/guidance terms built from multipliers.

All functions take canonical-min instances (rows ``Ax >= b``) and vector
multipliers ``lam >= 0`` with one entry per row.  Vector inputs may carry
leading batch dimensions, i.e. ``x`` of shape ``(..., n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from srg.grid import GridTensor
from srg.milp import MilpInstance

STANDARD = "standard"
GENERALIZED = "generalized"

# Sign convention of the guided target.  "literal" subtracts the objective
# gradient from the noise target exactly as the loss is written; "noise"
# flips both guidance terms, which is the consistent choice for an
# epsilon-predicting sampler (epsilon points against the score).
LITERAL = "literal"
NOISE = "noise"

HARMONIC = "harmonic"
CONSTANT_THEN_HARMONIC = "constant_then_harmonic"
POLYAK = "polyak"


class DualUnboundedError(ArithmeticError):
    """L(lambda) is -inf: a coordinate with nonzero reduced cost is unbounded."""


class PartitionUnderflowError(ArithmeticError):
    """Every quality weight underflowed, so the refined pmf is undefined."""


@dataclass(frozen=True)
class GuidanceConfig:
    gamma_o: float = 0.0
    gamma_c: float = 0.0
    mode: str = STANDARD
    convention: str = LITERAL
    # keep the 1[Ax < b] factor instead of pushing along A^T lam everywhere
    exact_indicator: bool = False
    # divide c and A^T lam by their max-abs so gammas are instance-scale free
    normalize: bool = False

    def __post_init__(self):
        if self.mode not in (STANDARD, GENERALIZED):
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.convention not in (LITERAL, NOISE):
            raise ValueError(f"unknown guidance convention {self.convention!r}")
        if not (np.isfinite(self.gamma_o) and np.isfinite(self.gamma_c)):
            raise ValueError("guidance coefficients must be finite")
        if self.gamma_o < 0:
            raise ValueError("gamma_o must be nonnegative")
        if self.mode == STANDARD and self.gamma_c < 0:
            raise ValueError("gamma_c must be nonnegative in standard mode")

    @property
    def is_null(self) -> bool:
        return self.gamma_o == 0 and self.gamma_c == 0

    def to_dict(self) -> dict:
        return {
            "gamma_o": float(self.gamma_o), "gamma_c": float(self.gamma_c),
            "mode": self.mode, "convention": self.convention,
            "exact_indicator": self.exact_indicator, "normalize": self.normalize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuidanceConfig":
        return cls(**d)


@dataclass
class DualState:
    lam: np.ndarray  # multipliers achieving dual_bound
    dual_bound: float
    history: list = field(default_factory=list)  # (iteration, L(lam_k))
    step_schedule: str = HARMONIC
    last_lam: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "lambda": [float(v) for v in self.lam],
            "dual_bound": float(self.dual_bound),
            "step_schedule": self.step_schedule,
            "iterations": len(self.history),
        }


def _check_lam(inst: MilpInstance, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape[0] != inst.m:
        raise ValueError(f"lambda has length {lam.shape[0]}, instance has m={inst.m}")
    if np.any(lam < 0) or np.any(~np.isfinite(lam)):
        raise ValueError("lambda must be finite and nonnegative")
    return lam


def _box(inst: MilpInstance):
    lo = np.array(inst.lower)
    hi = np.array(inst.upper)
    idx = inst.int_indices
    lo[idx] = np.ceil(lo[idx] - 1e-9)
    hi[idx] = np.floor(hi[idx] + 1e-9)
    if np.any(lo > hi):
        raise ValueError("box has no integer point")
    return lo, hi


def lagrangian_value(inst: MilpInstance, lam) -> tuple[float, np.ndarray]:
    """``min_{x in X} c.x + lam.(b - Ax)`` over the box/integrality set X.

    Separable: with reduced cost ``r = c - A^T lam`` each coordinate goes to
    its lower bound if ``r_j > 0`` (or ``r_j == 0``) and to its upper bound
    if ``r_j < 0``.  Returns ``-inf`` (and an infinite coordinate) when the
    chosen bound is infinite.
    """
    lam = _check_lam(inst, lam)
    lo, hi = _box(inst)
    r = inst.c - inst.A.T @ lam
    x = np.where(r < 0, hi, lo)
    if np.any(~np.isfinite(x) & (r != 0)):
        return -np.inf, x
    # a zero reduced cost on an infinite lower bound contributes nothing
    x = np.where(np.isfinite(x), x, 0.0)
    return float(r @ x + lam @ inst.b), x


def subgradient_solve(inst: MilpInstance, max_iters: int = 200,
                      schedule: str = HARMONIC, step: float | None = None,
                      constant_iters: int = 0, lam0=None,
                      target: float | None = None, patience: int = 50) -> DualState:
    """Projected subgradient ascent on L.

    Step rules, with ``g_k = b - A x_k``:

    * ``harmonic``: alpha_k = step / k.
    * ``constant_then_harmonic``: alpha_k = step for k <= constant_iters,
      then step * constant_iters / k.
    * ``polyak``: alpha_k = theta (target - L_k) / |g_k|^2 where ``target``
      is a primal upper bound (e.g. a known optimum); theta starts at 1 and
      halves after ``patience`` iterations without a new best bound.

    ``step`` defaults to a quarter of max|c|, since multipliers carry cost
    units.  The returned state holds the best bound seen and the multipliers
    that achieved it.
    """
    if not inst.is_canonical:
        raise ValueError("subgradient_solve expects a canonical-min instance")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    if schedule not in (HARMONIC, CONSTANT_THEN_HARMONIC, POLYAK):
        raise ValueError(f"unknown step schedule {schedule!r}")
    if schedule == POLYAK and (target is None or not np.isfinite(target)):
        raise ValueError("the polyak schedule needs a finite target")
    if step is None:
        step = 0.25 * max(float(np.abs(inst.c).max(initial=0.0)), 1.0)
    if step <= 0:
        raise ValueError("step must be positive")
    lam = np.zeros(inst.m) if lam0 is None else _check_lam(inst, lam0).copy()
    best_val, best_lam = -np.inf, lam.copy()
    history = []
    theta, stall = 1.0, 0
    for k in range(1, max_iters + 1):
        val, x = lagrangian_value(inst, lam)
        if not np.isfinite(val):
            raise DualUnboundedError(f"L(lambda) = -inf at iteration {k}")
        history.append((k, val))
        if val > best_val:
            best_val, best_lam = val, lam.copy()
            stall = 0
        else:
            stall += 1
        g = inst.b - inst.A @ x
        if schedule == POLYAK:
            if stall >= patience:
                theta, stall = theta / 2, 0
            g2 = float(g @ g)
            if g2 == 0 or best_val >= target:
                break
            alpha = theta * max(target - val, 0.0) / g2
        elif schedule == HARMONIC or k > constant_iters:
            alpha = step / k if schedule == HARMONIC else step * constant_iters / k
        else:
            alpha = step
        lam = np.maximum(lam + alpha * g, 0.0)
    return DualState(best_lam, best_val, history, schedule, last_lam=lam)


def optimality_term(x, x_star, c) -> np.ndarray | float:
    """``O(x) = || c * (x - x*) ||_1`` over the last axis."""
    x = np.asarray(x, dtype=float)
    val = np.abs(np.asarray(c) * (x - np.asarray(x_star))).sum(axis=-1)
    return float(val) if np.ndim(val) == 0 else val


def penalty_term(x, inst: MilpInstance, lam) -> np.ndarray | float:
    """``P(x) = lam . max(b - Ax, 0)`` over the last axis."""
    lam = _check_lam(inst, lam)
    x = np.asarray(x, dtype=float)
    viol = np.maximum(inst.b - x @ inst.A.T, 0.0)
    val = viol @ lam
    return float(val) if np.ndim(val) == 0 else val


def log_quality_weight(x, x_star, inst: MilpInstance, lam, g: GuidanceConfig):
    return -(g.gamma_o * optimality_term(x, x_star, inst.c)
             + g.gamma_c * penalty_term(x, inst, lam))


def quality_weight(x, x_star, inst: MilpInstance, lam, g: GuidanceConfig):
    """``w(x) = exp(-gamma_o O(x) - gamma_c P(x))``, in (0, 1] in standard mode."""
    return np.exp(log_quality_weight(x, x_star, inst, lam, g))


def refined_target_pmf(points, base_pmf, x_star, inst: MilpInstance, lam,
                       g: GuidanceConfig, return_z: bool = False):
    """``p~ = p w / Z`` on a finite support, Z by explicit summation."""
    points = np.asarray(points, dtype=float)
    p = np.asarray(base_pmf, dtype=float).reshape(-1)
    if points.shape[0] != p.shape[0]:
        raise ValueError("one pmf entry per point required")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("base_pmf must be a probability vector")
    w = quality_weight(points, x_star, inst, lam, g)
    pw = p * w
    Z = float(pw.sum())
    if not Z > np.finfo(float).tiny or not np.isfinite(Z):
        raise PartitionUnderflowError(f"normalizer Z={Z!r} underflowed")
    out = pw / Z
    return (out, Z) if return_z else out


def _round_integers(x, integrality):
    return np.where(integrality, np.round(x), x)


def guidance_direction(x_t, x_star, inst: MilpInstance, lam, g: GuidanceConfig):
    """Per-variable correction added to the noise target, before the
    sqrt(alpha_bar) factor: ``-gamma_o c*delta + gamma_c A^T lam`` under the
    literal convention (negated under the noise convention)."""
    lam = _check_lam(inst, lam)
    x_t = np.asarray(x_t, dtype=float)
    c = inst.c
    xr = _round_integers(x_t, inst.integrality)
    delta = np.sign(c * (xr - np.asarray(x_star)))  # sign(0) = 0
    if g.exact_indicator:
        active = (xr @ inst.A.T) < inst.b
        grad_p = (active * lam) @ inst.A
    else:
        grad_p = np.broadcast_to(inst.A.T @ lam, x_t.shape)
    c_term = c * delta
    if g.normalize:
        c_term = c_term / max(np.abs(c).max(initial=0.0), 1e-12)
        grad_p = grad_p / max(np.abs(inst.A.T @ lam).max(initial=0.0), 1e-12)
    d = -g.gamma_o * c_term + g.gamma_c * grad_p
    return -d if g.convention == NOISE else d


def guided_target_flat(x_t, t, eps, x_star, inst: MilpInstance, lam, schedule,
                       g: GuidanceConfig):
    """Guided training target for flat ``(..., n)`` inputs; ``t`` is a scalar
    or one timestep per batch row (1-based)."""
    x_t = np.asarray(x_t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x_t.shape != eps.shape or x_t.shape[-1] != inst.n:
        raise ValueError(f"shape mismatch: x_t {x_t.shape}, eps {eps.shape}, n={inst.n}")
    if g.is_null:
        return eps.copy()
    sab = np.sqrt(schedule.alpha_bar_at(t))
    if np.ndim(sab):
        sab = np.reshape(sab, np.shape(sab) + (1,) * (x_t.ndim - np.ndim(sab)))
    return eps + sab * guidance_direction(x_t, x_star, inst, lam, g)


def guided_target_score(x_t, t, eps, x_star, inst: MilpInstance, lam, schedule,
                        g: GuidanceConfig):
    """Guided target on a grid: ``eps - gamma_o sqrt(ab_t) c*delta'
    + gamma_c sqrt(ab_t) A^T lam`` (literal convention), zero on padding.

    ``delta' = sign(c * (round(x_t) - x*))`` with rounding on integer cells
    and ``sign(0) = 0``.  Accepts GridTensors or flat vectors.
    """
    if isinstance(x_t, GridTensor):
        if (not isinstance(eps, GridTensor) or eps.values.shape != x_t.values.shape
                or not np.array_equal(eps.pad_mask, x_t.pad_mask)):
            raise ValueError("x_t and eps grids must match")
        mask = x_t.pad_mask
        if mask.sum() != inst.n:
            raise ValueError("grid does not hold this instance's n variables")
        xf = x_t.values[0].reshape(-1)[: inst.n]
        ef = eps.values[0].reshape(-1)[: inst.n]
        tf = guided_target_flat(xf, t, ef, x_star, inst, lam, schedule, g)
        out = np.zeros(mask.size)
        out[: inst.n] = tf
        return GridTensor(out.reshape(1, *mask.shape), mask)
    return guided_target_flat(x_t, t, eps, x_star, inst, lam, schedule, g)


def level_set(pmf, alpha: float) -> np.ndarray:
    """Mask of support points whose mass is at least ``alpha`` times the
    largest mass."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    pmf = np.asarray(pmf, dtype=float)
    return pmf >= alpha * pmf.max()


def concentration_means(points, base_pmf, x_star, inst: MilpInstance, lam,
                        g: GuidanceConfig, alpha: float) -> tuple[float, float]:
    """Mean quality weight over the alpha level set of the base pmf and over
    the alpha level set of the refined pmf, in that order."""
    w = quality_weight(np.asarray(points, float), x_star, inst, lam, g)
    refined = refined_target_pmf(points, base_pmf, x_star, inst, lam, g)
    omega1 = level_set(base_pmf, alpha)
    omega2 = level_set(refined, alpha)
    return float(w[omega1].mean()), float(w[omega2].mean())

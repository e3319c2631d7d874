"""Noise schedules, guided score-matching training, DDPM / early-stop DDIM
sampling and diverse candidate generation.

Solutions are diffused in their native coordinates: every benchmark here
has variables in [0, 1] already, so no rescaling is applied.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from srg import autodiff as ad
from srg import scorenet as sn
from srg.encoder import BipartiteGraph, ConditionEmbedding, build_bipartite, encode_tensor
from srg.lagrangian import GuidanceConfig, guided_target_flat, penalty_term
from srg.milp import MilpInstance

DDPM = "ddpm"
DDIM_EARLYSTOP = "ddim_earlystop"

# Upper clip for compressed schedules; keeps 1/sqrt(alpha_t) small.
BETA_CAP = 0.5


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        if beta.size < 1 or np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("betas must lie in (0, 1)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def T(self) -> int:
        return self.beta.size

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        """``alpha_bar[t-1]`` is the cumulative product up to step t."""
        return np.cumprod(1.0 - self.beta)

    def alpha_bar_at(self, t):
        """Vectorised lookup with the convention alpha_bar(0) = 1."""
        t_arr = np.asarray(t)
        if np.any(t_arr < 0) or np.any(t_arr > self.T) or np.any(t_arr != np.round(t_arr)):
            raise IndexError(f"timestep {t} outside 0..{self.T}")
        ab = np.concatenate([[1.0], self.alpha_bar])
        out = ab[t_arr.astype(int)]
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"beta": [float(b) for b in self.beta]}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(np.asarray(d["beta"], float))


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear betas from ``beta_start`` to ``beta_end`` over T steps."""
    if T < 1:
        raise ValueError("T must be positive")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def compressed_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                        reference_T: int = 1000, cap: float = BETA_CAP) -> NoiseSchedule:
    """Linear schedule whose endpoints are stretched by ``reference_T / T``
    and clipped at ``cap``, so a short chain still ends near pure noise."""
    k = reference_T / T
    return NoiseSchedule(np.minimum(np.linspace(beta_start * k, beta_end * k, T), cap))


def forward_sample(x0, t, eps, schedule: NoiseSchedule):
    """``x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``; ``t`` scalar or per-row."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    ab = np.asarray(schedule.alpha_bar_at(t))
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (x0.ndim - ab.ndim))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def soft_round(x: ad.Tensor, temperature: float) -> ad.Tensor:
    """``floor(x) + sigmoid((frac(x) - 1/2) / temperature)``."""
    fl = np.floor(x.data)
    z = ad.scale(ad.add(x, -fl - 0.5), 1.0 / temperature)
    return ad.add(ad.sigmoid(z), fl)


def ste_round(x: ad.Tensor, integer_mask, temperature: float = 0.5) -> ad.Tensor:
    """Hard rounding on integer cells in the forward pass; the backward pass
    uses the gradient of :func:`soft_round`.  Other cells are the identity."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    mask = np.broadcast_to(np.asarray(integer_mask, bool), x.shape)
    value = np.where(mask, np.round(x.data), x.data)
    frac = x.data - np.floor(x.data)
    s = ad._sigmoid((frac - 0.5) / temperature)
    slope = np.where(mask, s * (1 - s) / temperature, 1.0).astype(x.data.dtype)
    return ad.Tensor(value, (x,), lambda g: (g * slope,))


# ----------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    h: int
    w: int
    T: int = 20
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 10
    seed: int = 0
    ste_temperature: float = 0.5
    channels: int = 32
    heads: int = 4
    token_dim: int = 32
    beta_start: float = 1e-4
    beta_end: float = 0.02
    compress_schedule: bool = True
    train_encoder: bool = False

    def __post_init__(self):
        for name in ("h", "w", "T", "batch_size", "epochs", "channels", "heads", "token_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.ste_temperature <= 0:
            raise ValueError("lr and ste_temperature must be positive")

    def schedule(self) -> NoiseSchedule:
        fn = compressed_schedule if self.compress_schedule else make_schedule
        return fn(self.T, self.beta_start, self.beta_end)

    def denoiser_config(self) -> sn.DenoiserConfig:
        return sn.DenoiserConfig(self.h, self.w, self.channels, self.heads,
                                 self.token_dim, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["guidance"] = self.guidance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["guidance"] = GuidanceConfig.from_dict(d["guidance"])
        return cls(**d)


@dataclass
class TrainItem:
    inst: MilpInstance  # canonical-min
    x_star: np.ndarray
    lam: np.ndarray
    tokens: np.ndarray  # n x D condition tokens
    graph: BipartiteGraph | None = None  # needed only when training the encoder

    def bipartite(self) -> BipartiteGraph:
        if self.graph is None:
            self.graph = build_bipartite(self.inst)
        return self.graph


def _grid_batch(vectors, h, w, dtype=np.float32):
    B = len(vectors)
    out = np.zeros((B, h * w), dtype)
    mask = np.zeros((B, h * w), bool)
    for i, v in enumerate(vectors):
        out[i, : v.size] = v
        mask[i, : v.size] = True
    return out.reshape(B, h, w), mask.reshape(B, h, w)


def _token_batch(tokens_list, dtype=np.float32):
    L = max(t.shape[0] for t in tokens_list)
    D = tokens_list[0].shape[1]
    out = np.zeros((len(tokens_list), L, D), dtype)
    mask = np.zeros((len(tokens_list), L), bool)
    for i, t in enumerate(tokens_list):
        out[i, : t.shape[0]] = t
        mask[i, : t.shape[0]] = True
    return out, mask


def make_batch(items, t, eps, schedule, guidance, h, w):
    """Noisy inputs, guided targets and masks for one batch; ``t`` holds one
    timestep per item and ``eps`` one noise vector per item."""
    xs, targets = [], []
    for it, ti, e in zip(items, t, eps):
        x_t = forward_sample(it.x_star, ti, e, schedule)
        xs.append(x_t)
        targets.append(guided_target_flat(x_t, ti, e, it.x_star, it.inst, it.lam,
                                          schedule, guidance))
    x_grid, gmask = _grid_batch(xs, h, w)
    tgt_grid, _ = _grid_batch(targets, h, w)
    tok, tmask = _token_batch([it.tokens for it in items])
    return x_grid, tgt_grid, gmask, tok, tmask


def _draw_batch_noise(rng, items, T):
    t = rng.integers(1, T + 1, size=len(items))
    eps = [rng.standard_normal(it.inst.n) for it in items]
    return t, eps


def batch_loss(params, items, t, eps, schedule, guidance) -> float:
    """Masked MSE of the denoiser on a fixed batch (no gradient)."""
    cfg = params.config
    x, tgt, gm, tok, tm = make_batch(items, t, eps, schedule, guidance, cfg.h, cfg.w)
    pred = sn.predict(params, x, t, tok, gm, tm)
    d = (pred - tgt) * gm
    return float((d * d).sum() / gm.sum())


def _encoded_tokens(items, enc_leaves, L):
    """Differentiable (B, L, D) token batch from the items' graphs."""
    rows = encode_tensor([it.bipartite() for it in items], enc_leaves)
    index = np.concatenate([b * L + np.arange(it.inst.n) for b, it in enumerate(items)])
    D = rows.shape[1]
    return ad.reshape(ad.scatter_rows(rows, index, len(items) * L), (len(items), L, D))


def train(dataset, cfg: TrainConfig, params: sn.DenoiserParams | None = None,
          progress=None, encoder_params: dict | None = None):
    """Minimise the masked squared error to the guided target.

    Returns (params, per-epoch mean loss).  Deterministic given ``cfg.seed``.
    With ``cfg.train_encoder`` the condition tokens are recomputed from each
    item's graph every batch and ``encoder_params`` (required) is updated in
    place alongside the denoiser.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if cfg.train_encoder and encoder_params is None:
        raise ValueError("train_encoder needs initial encoder_params")
    for it in dataset:
        if it.inst.n > cfg.h * cfg.w:
            raise ValueError(f"instance with n={it.inst.n} does not fit {cfg.h}x{cfg.w}")
        if it.tokens.shape != (it.inst.n, cfg.token_dim):
            raise ValueError("token matrix shape does not match the instance")
    schedule = cfg.schedule()
    params = params or sn.init_params(cfg.denoiser_config())
    trainable = dict(params.arrays)
    if cfg.train_encoder:
        for k, v in encoder_params.items():
            encoder_params[k] = np.asarray(v, np.float32)
            trainable["encoder/" + k] = encoder_params[k]
    state = sn.AdamState.zeros_like(trainable)
    adam = sn.AdamConfig(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    batch_id = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            items = [dataset[i] for i in order[start:start + cfg.batch_size]]
            t, eps = _draw_batch_noise(rng, items, cfg.T)
            x, tgt, gm, tok, tm = make_batch(items, t, eps, schedule, cfg.guidance,
                                             cfg.h, cfg.w)
            leaves = {k: ad.leaf(v) for k, v in trainable.items()}
            if cfg.train_encoder:
                enc = {k[len("encoder/"):]: v for k, v in leaves.items()
                       if k.startswith("encoder/")}
                tok = _encoded_tokens(items, enc, tok.shape[1])
            out = sn.forward_tensor(leaves, params.config, x, t, tok, gm, tm)
            pred = out.data
            if not np.all(np.isfinite(pred)):
                raise TrainingError(f"batch {batch_id}: non-finite denoiser output")
            diff = (pred - tgt) * gm
            count_cells = gm.sum()
            loss = float((diff * diff).sum() / count_cells)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in batch {batch_id}")
            out.backward((2.0 * diff / count_cells).astype(pred.dtype))
            grads = {k: np.zeros_like(v.data) if v.grad is None else v.grad
                     for k, v in leaves.items()}
            sn.adam_step(trainable, grads, state, adam)
            total += loss
            count += 1
            batch_id += 1
        losses.append(total / count)
        if progress is not None:
            progress(epoch, losses[-1])
    return params, losses


# ----------------------------------------------------------------- sampling

def _prepare(params, embeddings, n_samples):
    cfg = params.config
    emb = embeddings if isinstance(embeddings, (list, tuple)) else [embeddings] * n_samples
    n = emb[0].L
    tok, tm = _token_batch([e.tokens for e in emb])
    _, gm = _grid_batch([np.zeros(n)] * len(emb), cfg.h, cfg.w)
    return n, tok, tm, gm


def _to_grid(x, h, w):
    B, n = x.shape
    g = np.zeros((B, h * w), np.float32)
    g[:, :n] = x
    return g.reshape(B, h, w)


def _eps_hat(params, x, t, tok, tm, gm):
    cfg = params.config
    B, n = x.shape
    out = sn.predict(params, _to_grid(x, cfg.h, cfg.w), np.full(B, t), tok, gm, tm)
    return out.reshape(B, -1)[:, :n].astype(np.float64)


def _seeds(seed):
    return [int(s) for s in np.atleast_1d(seed)]


def _clip_box(clip, n):
    if clip is None:
        return None
    lo, hi = (np.broadcast_to(np.asarray(v, float), (n,)) for v in clip)
    return lo, hi


def sample_ddpm(params, embedding: ConditionEmbedding, schedule: NoiseSchedule, seed,
                return_trajectory: bool = False, clip=None):
    """Ancestral sampling from pure noise, one independent stream per seed.

    ``seed`` is an int (returns a vector) or a list of ints (returns a
    k x n array).  With ``return_trajectory`` also returns the list of
    states ``[x_T, x_{T-1}, ..., x_0]``.  ``clip = (lower, upper)`` clips
    the predicted x_0 to that box before each posterior step.
    """
    seeds = _seeds(seed)
    n, tok, tm, gm = _prepare(params, embedding, len(seeds))
    box = _clip_box(clip, n)
    rngs = [np.random.default_rng(s) for s in seeds]
    x = np.stack([r.standard_normal(n) for r in rngs])
    traj = [x.copy()]
    beta, alpha, ab = schedule.beta, schedule.alpha, schedule.alpha_bar
    for t in range(schedule.T, 0, -1):
        s = _eps_hat(params, x, t, tok, tm, gm)
        if box is None:
            mu = (x - beta[t - 1] / np.sqrt(1.0 - ab[t - 1]) * s) / np.sqrt(alpha[t - 1])
        else:
            ab_prev = schedule.alpha_bar_at(t - 1)
            x0 = np.clip((x - np.sqrt(1.0 - ab[t - 1]) * s) / np.sqrt(ab[t - 1]), *box)
            mu = (np.sqrt(ab_prev) * beta[t - 1] * x0
                  + np.sqrt(alpha[t - 1]) * (1.0 - ab_prev) * x) / (1.0 - ab[t - 1])
        if t > 1:
            z = np.stack([r.standard_normal(n) for r in rngs])
            x = mu + np.sqrt(beta[t - 1]) * z
        else:
            x = mu
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at step t={t}")
        traj.append(x.copy())
    out = x[0] if np.ndim(seed) == 0 else x
    return (out, traj) if return_trajectory else out


def ddim_timesteps(T: int, n_steps: int | None = None) -> np.ndarray:
    """Descending strided subsequence of 1..T with ``n_steps`` entries
    (always including T)."""
    n_steps = T if n_steps is None else n_steps
    if not 1 <= n_steps <= T:
        raise ValueError("sample steps must satisfy 1 <= T_sample <= T")
    ts = np.unique(np.round(np.linspace(1, T, n_steps)).astype(int))
    return ts[::-1]


def sample_ddim_earlystop(params, embedding: ConditionEmbedding, schedule: NoiseSchedule,
                          stop_index: int, seed, n_steps: int | None = None,
                          return_trajectory: bool = False, clip=None):
    """Deterministic DDIM (eta = 0) over ``n_steps`` strided timesteps.

    The chain runs from x_T towards x_0 and stops at the first state whose
    timestep is <= ``stop_index``, returning that state.  ``stop_index = 0``
    is the full trajectory; ``stop_index = T`` returns the initial noise.
    ``clip = (lower, upper)`` clips each predicted x_0 to that box and
    re-derives the noise estimate from it.
    """
    if not 0 <= stop_index <= schedule.T:
        raise ValueError(f"stop_index must lie in 0..{schedule.T}")
    seeds = _seeds(seed)
    n, tok, tm, gm = _prepare(params, embedding, len(seeds))
    box = _clip_box(clip, n)
    x = np.stack([np.random.default_rng(s).standard_normal(n) for s in seeds])
    traj = [x.copy()]
    ts = list(ddim_timesteps(schedule.T, n_steps)) + [0]
    for t, t_next in zip(ts[:-1], ts[1:]):
        if t <= stop_index:
            break
        ab_t = schedule.alpha_bar_at(t)
        ab_n = schedule.alpha_bar_at(t_next)
        e = _eps_hat(params, x, t, tok, tm, gm)
        x0_hat = (x - np.sqrt(1.0 - ab_t) * e) / np.sqrt(ab_t)
        if box is not None:
            x0_hat = np.clip(x0_hat, *box)
            e = (x - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
        x = np.sqrt(ab_n) * x0_hat + np.sqrt(1.0 - ab_n) * e
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at step t={t}")
        traj.append(x.copy())
    out = x[0] if np.ndim(seed) == 0 else x
    return (out, traj) if return_trajectory else out


@dataclass(frozen=True)
class SampleConfig:
    sampler: str = DDIM_EARLYSTOP
    T_sample: int | None = None  # None = every step
    stop_index: int = 0
    k: int = 8
    master_seed: int = 0
    delta: int = 10
    clip: bool = True  # clip predicted x_0 to the variable bounds

    def __post_init__(self):
        if self.sampler not in (DDPM, DDIM_EARLYSTOP):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.T_sample is not None and self.T_sample < 1:
            raise ValueError("T_sample must be positive")
        if self.stop_index < 0 or self.delta < 0:
            raise ValueError("stop_index and delta must be nonnegative")

    def seeds(self) -> list[int]:
        """Independent per-candidate streams derived from (master seed, i)."""
        return [int(np.random.SeedSequence([self.master_seed, i]).generate_state(1)[0])
                for i in range(self.k)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Candidate:
    x: np.ndarray
    seed: int
    penalty: float
    objective: float


def generate_diverse(params, embedding: ConditionEmbedding, cfg: SampleConfig,
                     inst: MilpInstance, lam, schedule: NoiseSchedule,
                     return_trajectory: bool = False):
    """k samples from independent seeds; the best has the smallest penalty,
    ties broken by objective, then by seed.  Returns (candidates, best index),
    plus the list of batch states per step with ``return_trajectory``.
    """
    seeds = cfg.seeds()
    if cfg.T_sample is not None and cfg.T_sample > schedule.T:
        raise ValueError("T_sample exceeds the schedule length")
    box = (inst.lower, inst.upper) if cfg.clip else None
    if cfg.sampler == DDPM:
        xs, traj = sample_ddpm(params, embedding, schedule, seeds, return_trajectory=True,
                               clip=box)
    else:
        xs, traj = sample_ddim_earlystop(params, embedding, schedule, cfg.stop_index, seeds,
                                         cfg.T_sample, return_trajectory=True, clip=box)
    cands = [Candidate(x, s, float(penalty_term(x, inst, lam)), float(inst.c @ x))
             for x, s in zip(xs, seeds)]
    best = min(range(len(cands)),
               key=lambda i: (cands[i].penalty, cands[i].objective, cands[i].seed))
    return (cands, best, traj) if return_trajectory else (cands, best)

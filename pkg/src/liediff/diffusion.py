"""Noise schedule, DSM training loop, Adam, and the geodesic-walk sampler.

Training follows the standard denoising recipe: draw data poses, perturb each
with tangent noise at a uniformly chosen level, regress the network onto the
level's score target, and step Adam.  Sampling runs the annealed Langevin
walk through the group exponential,

    X <- X Exp(eps_i s + sqrt(2 eps_i) z),      z ~ N(0, I),

consuming noise levels in strictly descending order, with optional equal
sub-steps per level and a final noise-free polish step at sigma_min.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _batch
from .lie_core import ParamMode, RigidTransform, Rotation, tangent_dim
from .score_net import (
    ScoreNetParams,
    init_params,
    net_backward,
    net_forward_batch,
    save_params,
)

SCORE_KINDS = ("surrogate", "true")
LOSS_WEIGHTINGS = ("sigma2", "none")


@dataclass(frozen=True)
class NoiseSchedule:
    """Ascending noise levels with their Langevin step sizes.

    net_indices maps each level to the index the score network was trained
    with; a freshly built schedule uses 0..L-1, a subsampled one keeps the
    original indices so conditioning stays consistent.
    """

    sigmas: np.ndarray
    eps_steps: np.ndarray
    net_indices: np.ndarray

    def __post_init__(self):
        if self.sigmas.ndim != 1 or self.sigmas.size < 2:
            raise ValueError("schedule needs at least two levels")
        if np.any(np.diff(self.sigmas) <= 0) or self.sigmas[0] <= 0:
            raise ValueError("sigmas must be positive and strictly ascending")
        if self.eps_steps.shape != self.sigmas.shape or np.any(self.eps_steps <= 0) \
                or not np.all(np.isfinite(self.eps_steps)):
            raise ValueError("eps_steps must be positive, finite, same length")
        if self.net_indices.shape != self.sigmas.shape:
            raise ValueError("net_indices must match sigmas in length")

    def __len__(self) -> int:
        return self.sigmas.size


def make_schedule(sigma_min: float, sigma_max: float, n_levels: int,
                  eps0: float = 0.1) -> NoiseSchedule:
    """Linear sigma grid with step sizes eps_i = eps0 * sigma_i^2 / sigma_max^2."""
    if not 0 < sigma_min < sigma_max:
        raise ValueError(f"need 0 < sigma_min < sigma_max, "
                         f"got ({sigma_min}, {sigma_max})")
    if n_levels < 2:
        raise ValueError(f"n_levels must be >= 2, got {n_levels}")
    if eps0 <= 0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    sigmas = np.linspace(sigma_min, sigma_max, n_levels)
    eps = eps0 * sigmas ** 2 / sigma_max ** 2
    return NoiseSchedule(sigmas, eps, np.arange(n_levels))


def subsample_schedule(schedule: NoiseSchedule, n_levels: int) -> NoiseSchedule:
    """Pick n_levels levels (endpoints kept) and rescale the step sizes.

    Fewer levels means fewer Langevin updates, so each kept step is scaled by
    L/n to preserve the integrated step budget, capped at 1/eps0 (recovered
    from the top step) so eps_i never exceeds sigma_i^2/sigma_max^2 and the
    drift term stays contractive.
    """
    big = len(schedule)
    if not 2 <= n_levels <= big:
        raise ValueError(f"n_levels must lie in [2, {big}], got {n_levels}")
    idx = np.round(np.linspace(0, big - 1, n_levels)).astype(int)
    if np.unique(idx).size != n_levels:
        raise ValueError(f"cannot pick {n_levels} distinct levels from {big}")
    eps0 = schedule.eps_steps[-1]
    scale = min(big / n_levels, 1.0 / eps0)
    return NoiseSchedule(schedule.sigmas[idx].copy(),
                         schedule.eps_steps[idx] * scale,
                         schedule.net_indices[idx].copy())


def truncate_schedule(schedule: NoiseSchedule, sigma_top: float) -> NoiseSchedule:
    """Drop every level with sigma > sigma_top, keeping step sizes unchanged.

    Starting the anneal further down the ladder keeps the walk inside the
    region the network was densely fit on; the walkers' initial poses are
    then drawn at the new top sigma. Useful when the top noise levels only
    spread state into territory the training distribution never visits.
    """
    sigma_top = float(sigma_top)
    if sigma_top < schedule.sigmas[1]:
        raise ValueError(
            f"sigma_top {sigma_top} keeps fewer than two levels "
            f"(second-lowest sigma is {schedule.sigmas[1]})")
    keep = schedule.sigmas <= sigma_top
    return NoiseSchedule(schedule.sigmas[keep].copy(),
                         schedule.eps_steps[keep].copy(),
                         schedule.net_indices[keep].copy())


def dsm_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(0.5 * np.sum(diff * diff))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: ScoreNetParams) -> AdamState:
    return AdamState(m={name: np.zeros_like(a) for name, a in params.flat()},
                     v={name: np.zeros_like(a) for name, a in params.flat()})


def adam_step(params: ScoreNetParams, grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              ) -> tuple[ScoreNetParams, AdamState]:
    t = state.t + 1
    new_m, new_v, updated = {}, {}, {}
    for name, arr in params.flat():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        updated[name] = arr - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return params.with_arrays(updated), AdamState(new_m, new_v, t)


@dataclass(frozen=True)
class TrainConfig:
    mode: ParamMode
    n_levels: int = 100
    sigma_min: float = 1e-4
    sigma_max: float = 1.0
    batch_size: int = 32
    noisy_samples_per_datum: int = 32
    total_steps: int = 20_000
    lr_init: float = 1e-3
    lr_final: float = 1e-5
    seed: int = 0
    score_kind: str = "surrogate"       # SE3 training target; others ignore it
    width: int = 256
    n_blocks: int = 1
    embed_dim: int = 64
    n_freq_x: int = 8
    n_freq_t: int = 8
    n_shapes: int | None = None         # inferred from the dataset when None
    eps0: float = 0.1
    loss_weighting: str = "sigma2"
    run_dir: str | None = None
    checkpoint_every: int = 0           # 0 = final checkpoint only
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "mode", ParamMode(self.mode))
        if self.n_levels < 2:
            raise ValueError("n_levels must be >= 2")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        for name in ("batch_size", "noisy_samples_per_datum", "width",
                     "n_blocks", "embed_dim", "n_freq_x", "n_freq_t",
                     "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.total_steps < 0 or self.checkpoint_every < 0:
            raise ValueError("step counts must be non-negative")
        if not (self.lr_init > 0 and self.lr_final > 0):
            raise ValueError("learning rates must be positive")
        if self.score_kind not in SCORE_KINDS:
            raise ValueError(f"score_kind must be one of {SCORE_KINDS}")
        if self.loss_weighting not in LOSS_WEIGHTINGS:
            raise ValueError(f"loss_weighting must be one of {LOSS_WEIGHTINGS}")


def _lr_at(config: TrainConfig, step: int) -> float:
    """Constant for the first half, then exponential decay to lr_final."""
    half = config.total_steps // 2
    if step < half or config.total_steps <= 1:
        return config.lr_init
    span = max(1, config.total_steps - 1 - half)
    frac = (step - half) / span
    return config.lr_init * (config.lr_final / config.lr_init) ** frac


def train(config: TrainConfig, dataset: Sequence, rng=None,
          callback: Callable[[int, float, float], None] | None = None,
          ) -> ScoreNetParams:
    """Run the DSM loop over (shape_id, pose) records and return the params.

    Each optimizer step draws batch_size data poses, fans each out into
    noisy_samples_per_datum perturbed copies at independently chosen noise
    levels, and regresses on the per-level score target: the sampled noise
    -z/sigma^2 (exact on SO3/R3SO3, surrogate on SE3), or the Jacobian-
    corrected SE3 score when score_kind is "true".  Per-example sigma^2 loss
    weights (the standard annealed-objective choice) keep all levels at
    comparable magnitude; disable via loss_weighting="none".

    Deterministic given config.seed when rng is omitted.  Non-finite loss
    aborts immediately rather than training on garbage.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    mode = config.mode
    dim = tangent_dim(mode)
    sids = np.array([rec.shape_id for rec in dataset], dtype=int)
    qs = np.stack([rec.pose.rot.q for rec in dataset])
    ts = np.stack([rec.pose.trans for rec in dataset])
    n_shapes = config.n_shapes if config.n_shapes is not None \
        else int(sids.max()) + 1
    schedule = make_schedule(config.sigma_min, config.sigma_max,
                             config.n_levels, config.eps0)
    params = init_params(mode, n_shapes, schedule.sigmas, rng,
                         width=config.width, n_blocks=config.n_blocks,
                         embed_dim=config.embed_dim, n_freq_x=config.n_freq_x,
                         n_freq_t=config.n_freq_t)
    state = adam_init(params)

    metrics = None
    if config.run_dir is not None:
        os.makedirs(config.run_dir, exist_ok=True)
        snapshot = asdict(config)
        snapshot["mode"] = config.mode.value
        with open(os.path.join(config.run_dir, "config.json"), "w") as fh:
            json.dump(snapshot, fh, indent=2, sort_keys=True)
        metrics = open(os.path.join(config.run_dir, "metrics.log"), "w")

    start = time.monotonic()
    try:
        for step in range(config.total_steps):
            lr = _lr_at(config, step)
            data_idx = rng.integers(0, len(dataset), config.batch_size)
            rep = np.repeat(data_idx, config.noisy_samples_per_datum)
            levels = rng.integers(0, config.n_levels, rep.size)
            sig = schedule.sigmas[levels]
            z = rng.standard_normal((rep.size, dim)) * sig[:, None]
            zq, zt = _batch.group_exp_batch(z, mode)
            nq, nt = _batch.compose_batch(qs[rep], ts[rep], zq, zt, mode)
            x_in = _batch.group_log_batch(nq, nt, mode)
            if mode == ParamMode.SE3 and config.score_kind == "true":
                target = _batch.se3_score_true(
                    _batch.wrap_principal(z, mode), sig)
            else:
                target = -z / sig[:, None] ** 2
            weights = sig ** 2 if config.loss_weighting == "sigma2" else None
            loss, grads = net_backward(params, x_in, levels, sids[rep],
                                       target, weights=weights)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at step {step}: loss={loss}, lr={lr:g}, "
                    f"levels [{levels.min()}, {levels.max()}]")
            params, state = adam_step(params, grads, state, lr)
            if callback is not None and step % config.log_every == 0:
                callback(step, loss, lr)
            if metrics is not None and step % config.log_every == 0:
                wall = time.monotonic() - start
                metrics.write(f"{step} {loss:.10g} {lr:.10g} {wall:.3f}\n")
                metrics.flush()
            if config.run_dir is not None and config.checkpoint_every > 0 \
                    and step > 0 and step % config.checkpoint_every == 0:
                save_params(params, os.path.join(config.run_dir,
                                                 f"ckpt_{step:07d}.ldsn"))
    finally:
        if metrics is not None:
            metrics.close()
    if config.run_dir is not None:
        save_params(params, os.path.join(config.run_dir, "ckpt_final.ldsn"))
    return params


def geodesic_walk(score_fn: Callable[[np.ndarray, int, float], np.ndarray],
                  schedule: NoiseSchedule, mode: ParamMode, rng,
                  n: int = 1, substeps: int = 1,
                  init: RigidTransform | None = None,
                  final_step: bool = True, rounds: int = 1,
                  ) -> list[RigidTransform]:
    """Anneal n walkers through the schedule with an arbitrary score callback.

    score_fn(x_tangents, net_index, sigma) receives the walkers' current
    tangent coordinates as an (n, dim) array and returns score rows.  Levels
    run from sigma_max down to sigma_min; each level applies `substeps`
    sub-updates of size eps_i/substeps, repeated `rounds` times (extra
    full-size Langevin passes per level); final_step adds one noise-free
    update at sigma_min.
    """
    mode = ParamMode(mode)
    dim = tangent_dim(mode)
    if n < 1 or substeps < 1 or rounds < 1:
        raise ValueError("n, substeps, and rounds must be >= 1")
    if init is None:
        z0 = rng.standard_normal((n, dim)) * schedule.sigmas[-1]
        q, t = _batch.group_exp_batch(z0, mode)
    else:
        q = np.tile(init.rot.q, (n, 1))
        t = np.tile(init.trans, (n, 1))
    for k in range(len(schedule) - 1, -1, -1):
        eps = schedule.eps_steps[k] / substeps
        for _ in range(rounds * substeps):
            x_t = _batch.group_log_batch(q, t, mode)
            s = score_fn(x_t, int(schedule.net_indices[k]),
                         float(schedule.sigmas[k]))
            step = eps * s + np.sqrt(2.0 * eps) * rng.standard_normal((n, dim))
            if not np.all(np.isfinite(step)):
                raise RuntimeError(f"sampler diverged at level {k}")
            q, t = _batch.compose_batch(q, t, *_batch.group_exp_batch(step, mode),
                                        mode)
    if final_step:
        x_t = _batch.group_log_batch(q, t, mode)
        s = score_fn(x_t, int(schedule.net_indices[0]), float(schedule.sigmas[0]))
        step = schedule.eps_steps[0] * s
        if not np.all(np.isfinite(step)):
            raise RuntimeError("sampler diverged on the final noise-free step")
        q, t = _batch.compose_batch(q, t, *_batch.group_exp_batch(step, mode),
                                    mode)
    return [RigidTransform(Rotation.from_quat(q[i]), t[i].copy())
            for i in range(n)]


def _net_score_fn(params: ScoreNetParams, shape_id: int):
    def fn(x_t: np.ndarray, net_index: int, sigma: float) -> np.ndarray:
        n = x_t.shape[0]
        return net_forward_batch(params, x_t, np.full(n, net_index, dtype=int),
                                 np.full(n, shape_id, dtype=int))
    return fn


def _check_schedule(params: ScoreNetParams, schedule: NoiseSchedule) -> None:
    if np.any(schedule.net_indices < 0) \
            or np.any(schedule.net_indices >= params.n_levels):
        raise ValueError("schedule net_indices out of range for these params")
    expected = params.sigmas[schedule.net_indices]
    if not np.allclose(schedule.sigmas, expected, rtol=1e-9, atol=0):
        raise ValueError("schedule sigmas disagree with the params' levels")


def sample(params: ScoreNetParams, shape_id: int, schedule: NoiseSchedule,
           mode: ParamMode, rng, substeps: int = 1,
           init: RigidTransform | None = None,
           final_step: bool = True) -> RigidTransform:
    """Draw one pose from the trained score model via the geodesic walk."""
    return sample_batch(params, shape_id, schedule, mode, rng, n=1,
                        substeps=substeps, init=init, final_step=final_step)[0]


def sample_batch(params: ScoreNetParams, shape_id: int,
                 schedule: NoiseSchedule, mode: ParamMode, rng, n: int,
                 substeps: int = 1, init: RigidTransform | None = None,
                 final_step: bool = True, rounds: int = 1,
                 ) -> list[RigidTransform]:
    mode = ParamMode(mode)
    if mode != params.mode:
        raise ValueError(f"params are for mode {params.mode.value}, "
                         f"sampling requested {mode.value}")
    if not 0 <= shape_id < params.n_shapes:
        raise ValueError(f"shape_id out of range [0, {params.n_shapes})")
    _check_schedule(params, schedule)
    return geodesic_walk(_net_score_fn(params, shape_id), schedule, mode, rng,
                         n=n, substeps=substeps, init=init,
                         final_step=final_step, rounds=rounds)

"""Noise schedule, denoising score matching, and annealed Langevin sampling on SE(3).

The network predicts the tangent displacement from the noisy pose back to the
data, and the score is that output divided by sigma^2. The sigma^2-weighted
regression ``sigma^2 * ||s - (-eps / sigma^2)||^2`` then reads
``||raw + eps||^2 / sigma^2``. Predicting displacements keeps the regression
target on the same scale at every level; predicting ``eps / sigma`` instead
asks the network for a 1/sigma gain on its inputs, which trains far slower. Sampling runs many chains as one batch; every chain
owns its own generator seeded from ``(seed, chain_index)`` so chain ``i`` draws
the same noise regardless of how many chains run beside it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .constraints import DemoConstraint, GuidanceConfig, loss_gradient_arr
from .errors import InvalidArgument, NumericalFailure, SamplerDivergence
from .gripper import GripperSpec, gripper_points_arr
from .lie import GraspPose, Twist, arrays_to_poses, quat_to_matrix, random_quat, retract_arr
from .network.model import (
    Batch,
    condition,
    encode_object,
    forward_batch,
    forward_tokens,
    forward_with_gradients,
    precompute_modulations,
)
from .network.params import NetworkConfig, Params, init_params

log = logging.getLogger(__name__)

TRANSLATION_CLAMP = 2.0
# chains per network call while sampling; larger batches spill out of cache
FORWARD_CHUNK = 128


@dataclass(frozen=True)
class NoiseSchedule:
    L: int = 30
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    eps0: float = 0.5
    n_inner: int = 2

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise InvalidArgument("need 0 < sigma_min < sigma_max")
        if self.L < 2:
            raise InvalidArgument("need L >= 2")
        if not self.eps0 > 0:
            raise InvalidArgument("eps0 must be positive")
        if self.n_inner < 1:
            raise InvalidArgument("n_inner must be >= 1")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([sigma(k, self) for k in range(self.L)])


def sigma(k: int, schedule: NoiseSchedule) -> float:
    if not 0 <= k < schedule.L:
        raise InvalidArgument(f"level {k} outside [0, {schedule.L})")
    if k == schedule.L - 1:
        return float(schedule.sigma_max)
    ratio = schedule.sigma_max / schedule.sigma_min
    return float(schedule.sigma_min * ratio ** (k / (schedule.L - 1)))


def step_size(k: int, schedule: NoiseSchedule) -> float:
    return schedule.eps0 * (sigma(k, schedule) / schedule.sigma_max) ** 2


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def object_gripper(cloud, gripper: GripperSpec | None = None) -> GripperSpec:
    """Gripper spec expressed in the cloud's normalized frame."""
    gripper = gripper if gripper is not None else GripperSpec()
    return gripper.scaled(1.0 / cloud.frame.scale)


def score(h: GraspPose, k: int, cloud, params: Params, schedule: NoiseSchedule, gripper: GripperSpec | None = None) -> Twist:
    """s_theta(H, k, X_o) as a body-frame twist."""
    canon = object_gripper(cloud, gripper).canonical_points
    xg = gripper_points_arr(h.rotation.q[None], h.translation[None], canon)
    rot = quat_to_matrix(h.rotation.q[None])
    raw = forward_batch(params, Batch(xg, [k], [cloud.points], [0], schedule.L, rot))[0]
    return Twist.from_vector(raw / sigma(k, schedule) ** 2)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0
    objects_per_batch: int = 4
    weighted: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.objects_per_batch < 1:
            raise InvalidArgument("epochs >= 0, batch_size >= 1 and objects_per_batch >= 1 required")
        if not self.learning_rate > 0 or self.weight_decay < 0 or self.checkpoint_every < 0:
            raise InvalidArgument("learning_rate > 0, weight_decay >= 0, checkpoint_every >= 0 required")


def _level_weights(sig: np.ndarray, weighted: bool) -> np.ndarray:
    # ||s - target||^2 = ||raw + eps||^2 / sigma^4; the sigma^2 weight leaves 1 / sigma^2
    return 1.0 / sig**2 if weighted else 1.0 / sig**4


def dsm_targets(q, t, k, schedule: NoiseSchedule, rng: np.random.Generator, weighted: bool = True):
    """Perturbed poses, regression targets for the raw output, and per-sample weights."""
    sig = schedule.sigmas[k]
    eps = rng.standard_normal((len(k), 6)) * sig[:, None]
    qn, tn = retract_arr(q, t, eps)
    return qn, tn, -eps, _level_weights(sig, weighted)


def dsm_loss(batch, params: Params, schedule: NoiseSchedule, rng: np.random.Generator,
             gripper: GripperSpec | None = None, weighted: bool = True) -> float:
    """Batch-mean DSM loss for a list of ``(GraspPose, ObjectCloud)`` pairs."""
    if not batch:
        raise InvalidArgument("empty batch")
    clouds, index, q, t, canon = [], [], [], [], []
    for h, cloud in batch:
        ids = [i for i, c in enumerate(clouds) if c is cloud]
        if ids:
            index.append(ids[0])
        else:
            clouds.append(cloud)
            index.append(len(clouds) - 1)
        q.append(h.rotation.q)
        t.append(h.translation)
        canon.append(object_gripper(cloud, gripper).canonical_points)
    k = rng.integers(0, schedule.L, size=len(batch))
    qn, tn, target, w = dsm_targets(np.array(q), np.array(t), k, schedule, rng, weighted)
    xg = gripper_points_arr(qn, tn, np.array(canon))
    out = forward_batch(params, Batch(xg, k, [c.points for c in clouds], index, schedule.L, quat_to_matrix(qn)))
    per = w * ((out - target) ** 2).sum(axis=-1)
    if not np.all(np.isfinite(per)):
        raise NumericalFailure("non-finite DSM loss", batch=int(np.flatnonzero(~np.isfinite(per))[0]))
    return float(per.mean())


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, weight_decay: float,
                b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam step with L2 weight decay folded into the gradient."""
    g = grad + weight_decay * theta
    state.step += 1
    state.m *= b1
    state.m += (1 - b1) * g
    state.v *= b2
    state.v += (1 - b2) * g * g
    mhat = state.m / (1 - b1**state.step)
    vhat = state.v / (1 - b2**state.step)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


def epoch_batches(obj_index: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Object-grouped batches: each holds up to ``objects_per_batch`` chunks of one object's grasps."""
    per_chunk = max(1, cfg.batch_size // cfg.objects_per_batch)
    chunks = []
    for o in np.unique(obj_index):
        rows = rng.permutation(np.flatnonzero(obj_index == o))
        chunks += [rows[i : i + per_chunk] for i in range(0, len(rows), per_chunk)]
    order = rng.permutation(len(chunks))
    chunks = [chunks[i] for i in order]
    return [np.concatenate(chunks[i : i + cfg.objects_per_batch]) for i in range(0, len(chunks), cfg.objects_per_batch)]


@dataclass
class TrainResult:
    params: Params
    losses: list[float]
    opt: AdamState
    epoch: int = 0
    extra: dict = field(default_factory=dict)


def train(dataset, net: NetworkConfig, schedule: NoiseSchedule, cfg: TrainConfig,
          resume: TrainResult | None = None,
          on_epoch: Callable[[int, float, TrainResult], None] | None = None) -> TrainResult:
    """Adam on the DSM loss; deterministic given ``cfg.seed`` and the dataset.

    Epoch ``e`` draws its shuffling and noise from ``default_rng([seed, e])``, so
    a resumed run reproduces an uninterrupted one. ``on_epoch`` is called after
    every epoch with the 1-based epoch number (used for checkpointing).
    """
    q, t, obj_index, canon = dataset.training_arrays()
    if len(q) == 0:
        raise InvalidArgument("dataset has no grasps")
    if net.g != canon.shape[1]:
        raise InvalidArgument(f"network expects g={net.g} gripper points, dataset gripper has {canon.shape[1]}")
    clouds = [o.cloud.points for o in dataset.objects]
    if resume is None:
        state = TrainResult(init_params(net, cfg.seed), [], None, 0)
        state.opt = AdamState.zeros(state.params.size)
    else:
        state = resume
    for epoch in range(state.epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        total = 0.0
        batches = epoch_batches(obj_index, cfg, rng)
        for b, rows in enumerate(batches):
            objs, local = np.unique(obj_index[rows], return_inverse=True)
            k = rng.integers(0, schedule.L, size=len(rows))
            qn, tn, target, w = dsm_targets(q[rows], t[rows], k, schedule, rng, cfg.weighted)
            xg = gripper_points_arr(qn, tn, canon[obj_index[rows]])
            batch = Batch(xg, k, [clouds[o] for o in objs], local, schedule.L, quat_to_matrix(qn))
            try:
                loss, grads = forward_with_gradients(state.params, batch, target, w)
            except NumericalFailure as exc:
                raise NumericalFailure(f"epoch {epoch + 1}, batch {b}: {exc}", epoch=epoch + 1, batch=b) from exc
            if not np.all(np.isfinite(grads.flat)):
                raise NumericalFailure(f"epoch {epoch + 1}, batch {b}: non-finite gradient", epoch=epoch + 1, batch=b)
            adam_update(state.params.flat, grads.flat, state.opt, cfg.learning_rate, cfg.weight_decay)
            total += loss
        state.losses.append(total / len(batches))
        state.epoch = epoch + 1
        log.info("epoch %d loss %.6f", state.epoch, state.losses[-1])
        if on_epoch is not None:
            on_epoch(state.epoch, state.losses[-1], state)
    return state


def save_training_state(path, state: TrainResult, schedule: NoiseSchedule, cfg: TrainConfig, extra: dict | None = None) -> None:
    """Checkpoint plus an ``.opt.npz`` file holding the optimizer moments."""
    from .network.checkpoint import save_params

    meta = {
        "epoch": state.epoch,
        "losses": [float(x) for x in state.losses],
        "schedule": asdict(schedule),
        "train": asdict(cfg),
    }
    meta.update(extra or {})
    save_params(path, state.params, meta)
    np.savez(_opt_path(path), m=state.opt.m, v=state.opt.v, step=np.array(state.opt.step))


def load_training_state(path) -> TrainResult:
    from .network.checkpoint import load_params

    params, meta = load_params(path)
    opt_file = _opt_path(path)
    if opt_file.exists():
        with np.load(opt_file) as z:
            opt = AdamState(z["m"].copy(), z["v"].copy(), int(z["step"]))
    else:
        opt = AdamState.zeros(params.size)
    return TrainResult(params, list(meta.get("losses", [])), opt, int(meta.get("epoch", 0)), meta)


def _opt_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".opt.npz")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _init_arrays(rng: np.random.Generator, schedule: NoiseSchedule):
    q = random_quat(rng)
    t = rng.standard_normal(3) * schedule.sigma_max
    n = np.linalg.norm(t)
    if n > TRANSLATION_CLAMP:
        t = t * (TRANSLATION_CLAMP / n)
    return q, t


def init_sample(rng: np.random.Generator, schedule: NoiseSchedule) -> GraspPose:
    """Haar rotation and a Gaussian translation with std sigma_max, clamped to norm 2."""
    q, t = _init_arrays(rng, schedule)
    return GraspPose.from_qt(q, t)


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(chain)])


@dataclass
class SampleResult:
    q: np.ndarray
    t: np.ndarray
    trajectory: list[tuple[int, np.ndarray, np.ndarray]] | None = None

    def poses(self) -> list[GraspPose]:
        return arrays_to_poses(self.q, self.t)


def annealed_langevin(state, noise: np.ndarray, schedule: NoiseSchedule, drift, retract_fn,
                      on_level=None, check=None):
    """Annealed Langevin core shared by the pose sampler and toy models.

    ``drift(state, k, sig)`` returns the (n, m) drift, ``retract_fn(state, xi)``
    applies a step, ``noise`` is (n, L * n_inner, m). Levels run from L-1 down to
    0 with ``n_inner`` steps each, then one noise-free step ``sigma_0^2 * drift``.
    ``on_level(k, state)`` sees the state after each level (``k = -1`` after the
    final step); ``check(k, state)`` may raise.
    """
    step = 0
    for k in range(schedule.L - 1, -1, -1):
        sig = sigma(k, schedule)
        eps = step_size(k, schedule)
        noise_scale = math.sqrt(2.0 * eps)
        for _ in range(schedule.n_inner):
            state = retract_fn(state, eps * drift(state, k, sig) + noise_scale * noise[:, step])
            step += 1
        if check is not None:
            check(k, state)
        if on_level is not None:
            on_level(k, state)
    sig = sigma(0, schedule)
    state = retract_fn(state, sig**2 * drift(state, 0, sig))
    if check is not None:
        check(0, state)
    if on_level is not None:
        on_level(-1, state)
    return state


def guided_drift(score_fn, grad_fn=None, alpha: float = 0.0):
    """``score - alpha * grad``; with no gradient or alpha 0 the score is returned untouched."""
    if grad_fn is None or alpha == 0:
        return score_fn

    def drift(state, k, sig):
        return score_fn(state, k, sig) - alpha * grad_fn(state)

    return drift


def run_chains(cloud, params: Params, schedule: NoiseSchedule, n: int, seed: int,
               gripper: GripperSpec | None = None, constraint: DemoConstraint | None = None,
               guidance: GuidanceConfig | None = None, trajectory: bool = False,
               chain_offset: int = 0, dtype=np.float32) -> SampleResult:
    """Annealed Langevin over ``n`` chains in one batch.

    Each chain draws its initial pose and then one 6-vector of noise per inner
    step from ``chain_rng(seed, chain_offset + i)``. With a constraint and a
    nonzero ``guidance.alpha`` the drift is ``s - alpha * grad L``. The network
    forward runs in ``dtype`` (float32 by default, about twice as fast on one
    core); poses, noise and guidance stay in float64.
    """
    if n < 0:
        raise InvalidArgument("n must be >= 0")
    if n == 0:
        return SampleResult(np.zeros((0, 4)), np.zeros((0, 3)), [] if trajectory else None)
    canon = object_gripper(cloud, gripper).canonical_points
    n_steps = schedule.L * schedule.n_inner
    q = np.empty((n, 4))
    t = np.empty((n, 3))
    z = np.empty((n, n_steps, 6))
    for i in range(n):
        rng = chain_rng(seed, chain_offset + i)
        q[i], t[i] = _init_arrays(rng, schedule)
        z[i] = rng.standard_normal((n_steps, 6))
    f_o = encode_object(cloud.points, params)
    net = params if params.flat.dtype == dtype else params.astype(dtype)
    cache: dict[int, tuple] = {}

    def score_fn(state, k, sig):
        if k not in cache:
            cond = condition(params, f_o, k)
            mods = precompute_modulations(params, cond)
            if mods is not None:
                mods = [tuple(m.astype(dtype) for m in level) for level in mods]
            cache.clear()
            cache[k] = (cond.astype(dtype), mods)
        cond, mods = cache[k]
        q, t = state
        xg = gripper_points_arr(q, t, canon).astype(dtype)
        rot = quat_to_matrix(q).astype(dtype)
        raw = np.concatenate([
            forward_tokens(net, xg[i : i + FORWARD_CHUNK], cond, mods, rot[i : i + FORWARD_CHUNK])
            for i in range(0, len(xg), FORWARD_CHUNK)
        ])
        return raw.astype(np.float64) / sig**2

    grad_fn = None
    if constraint is not None and guidance is not None:
        def grad_fn(state):
            return loss_gradient_arr(state[0], state[1], constraint, guidance)

    def check(k, state):
        if not (np.all(np.isfinite(state[0])) and np.all(np.isfinite(state[1]))):
            raise SamplerDivergence(k)

    traj = [(schedule.L, q.copy(), t.copy())] if trajectory else None

    def record(k, state):
        traj.append((k, state[0].copy(), state[1].copy()))

    drift = guided_drift(score_fn, grad_fn, guidance.alpha if guidance is not None else 0.0)
    q, t = annealed_langevin((q, t), z, schedule, drift, lambda s, xi: retract_arr(s[0], s[1], xi),
                             record if trajectory else None, check)
    return SampleResult(q, t, traj)


def sample_unguided(cloud, params: Params, schedule: NoiseSchedule, seed: int, n: int = 1,
                    gripper: GripperSpec | None = None, trajectory: bool = False) -> SampleResult:
    return run_chains(cloud, params, schedule, n, seed, gripper, trajectory=trajectory)


def sample_guided(cloud, params: Params, schedule: NoiseSchedule, constraint: DemoConstraint,
                  guidance: GuidanceConfig, seed: int, n: int = 1, gripper: GripperSpec | None = None,
                  trajectory: bool = False) -> SampleResult:
    return run_chains(cloud, params, schedule, n, seed, gripper, constraint, guidance, trajectory)

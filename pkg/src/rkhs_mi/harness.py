"""Training loop, multi-trial statistics and trace smoothing."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import critics, estimators, numkit
from .complexity import RegWeights, default_reg_weights
from .critics import AsklParams, Critic, MlpParams
from .datagen import GaussianTask, Schedule, make_marginal, sample_task, validate_schedule
from .errors import DivergenceError, MagnitudeError, ParameterError
from .estimators import Batch, EmaState
from .numkit import AdamState, RngStream, adam_step

log = logging.getLogger(__name__)

DEFAULT_LR = {"askl": 1e-3, "mlp": 5e-4}


@dataclass
class TrainConfig:
    critic: str = "askl"
    estimator: str = "nwj"
    feature_dim: int = 512
    freq_scale: Optional[float] = None
    hidden: Tuple[int, ...] = (256, 256)
    reg: Optional[RegWeights] = None
    batch_size: int = 64
    lr: Optional[float] = None
    schedule: Schedule = field(default_factory=lambda: [(2.0, 4000)])
    seed: int = 0
    trial: int = 0
    dim: int = 20
    cubed: bool = False
    ema_decay: float = 0.99
    eval_batch: bool = False
    log_every: int = 0

    def __post_init__(self):
        if self.critic not in DEFAULT_LR:
            raise ParameterError(f"unknown critic {self.critic!r}")
        if self.estimator not in estimators.ESTIMATORS:
            raise ParameterError(f"unknown estimator {self.estimator!r}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.reg is None:
            # the baseline MLP is trained unregularized unless weights are given
            self.reg = default_reg_weights(self.estimator) if self.critic == "askl" else RegWeights()
        if self.lr is None:
            self.lr = DEFAULT_LR[self.critic]
        if not self.lr >= 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.ema_decay < 1:
            raise ParameterError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if self.freq_scale is None:
            self.freq_scale = 1.0 / math.sqrt(self.input_dim)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.schedule = validate_schedule(self.schedule)

    @property
    def input_dim(self) -> int:
        return 2 * self.dim

    @property
    def total_steps(self) -> int:
        return sum(s for _, s in self.schedule)


@dataclass
class StepRecord:
    step: int
    level_true_mi: float
    bound_value: float
    train_objective: float
    reg_value: float
    ema_a: Optional[float] = None
    eval_value: Optional[float] = None


@dataclass
class LevelStats:
    true_mi: float
    bias: float
    variance: float
    rmse: float
    n_estimates: int


# ------------------------------------------------------------ composed objective


def objective_and_grad(p: Critic, batch: Batch, estimator: str, reg: RegWeights, ema=None):
    """Minimised objective ``-(bound or GAN value) + penalties`` and its gradient.

    Returns ``(objective, reported, reg_value, grads, ema)``. The forward pass
    is shared between the estimator and the regularizers.
    """
    Z = batch.stacked()
    n = batch.n
    if isinstance(p, AsklParams):
        s = math.sqrt(2 * p.feature_dim)
        z1 = Z @ p.Omega + p.b
        z2 = Z @ p.OmegaPrime + p.bprime
        phi = (numkit.cos(z1) + numkit.cos(z2)) / s
        f = phi @ p.w
        train, reported, ema = estimators.evaluate(estimator, f[:n], f[n:], ema)
        g_out = -np.concatenate([train.d_joint, train.d_marginal])

        reg_value = 0.0
        grad_w = phi.T @ g_out
        dphi = np.outer(g_out, p.w)
        if reg.lambda1:
            w_norm = float(np.linalg.norm(p.w))
            reg_value += reg.lambda1 * w_norm
            if w_norm >= 1e-12:
                grad_w = grad_w + reg.lambda1 * p.w / w_norm
        if reg.lambda2:
            f_norm = float(np.linalg.norm(phi))
            reg_value += reg.lambda2 * f_norm
            if f_norm >= 1e-12:
                dphi = dphi + (reg.lambda2 / f_norm) * phi
        grads = {
            "Omega": Z.T @ (numkit.sin(z1) * dphi) / -s,
            "OmegaPrime": Z.T @ (numkit.sin(z2) * dphi) / -s,
            "w": grad_w,
        }
        return -train.value + reg_value, reported, reg_value, grads, ema

    acts, f = critics._mlp_activations(p, Z)
    train, reported, ema = estimators.evaluate(estimator, f[:n], f[n:], ema)
    g_out = -np.concatenate([train.d_joint, train.d_marginal])
    reg_value = 0.0
    dL_dh = None
    if reg.lambda1:
        reg_value += reg.lambda1 * float(np.linalg.norm(p.weights[-1]))
    if reg.lambda2:
        H = acts[-1]
        h_norm = float(np.linalg.norm(H))
        reg_value += reg.lambda2 * h_norm
        if h_norm >= 1e-12:
            dL_dh = (reg.lambda2 / h_norm) * H
    grads = critics.mlp_backward(p, Z, g_out, dL_dh=dL_dh)
    if reg.lambda1:
        W = p.weights[-1]
        w_norm = float(np.linalg.norm(W))
        if w_norm >= 1e-12:
            key = f"W{len(p.weights) - 1}"
            grads[key] = grads[key] + reg.lambda1 * W / w_norm
    return -train.value + reg_value, reported, reg_value, grads, ema


def train_step(p: Critic, estimator: str, reg: RegWeights, batch: Batch, adam: AdamState, ema=None):
    """One Adam step on the composed objective.

    Returns ``(record_fields, params, ema)``; ``adam`` is advanced in place.
    The reported bound is evaluated on the batch before the update.
    """
    objective, reported, reg_value, grads, ema = objective_and_grad(p, batch, estimator, reg, ema)
    if not math.isfinite(objective):
        raise DivergenceError(f"non-finite objective {objective}")
    names = p.trainable_names
    vec = critics.pack(p.trainable(), names)
    new_vec = adam_step(adam, vec, critics.pack(grads, names))
    p = critics.unpack(p, new_vec)
    fields = dict(
        bound_value=float(reported),
        train_objective=float(objective),
        reg_value=float(reg_value),
        ema_a=float(ema.value) if estimator == "mine" else None,
    )
    return fields, p, ema


def init_critic(cfg: TrainConfig, rng: RngStream) -> Critic:
    if cfg.critic == "askl":
        return critics.askl_init(rng, cfg.input_dim, cfg.feature_dim, cfg.freq_scale)
    return critics.mlp_init(rng, cfg.input_dim, cfg.hidden)


def run_trial(cfg: TrainConfig, return_critic: bool = False, callback: Optional[Callable] = None):
    """Train one critic through the whole schedule.

    Records are emitted for every step in schedule order. On overflow or
    divergence a :class:`DivergenceError` tagged with the 1-based step is
    raised; its ``records`` attribute holds everything logged before it.
    """
    init_rng = RngStream(cfg.seed, 2 * cfg.trial)
    data_rng = RngStream(cfg.seed, 2 * cfg.trial + 1)
    p = init_critic(cfg, init_rng)
    n_params = critics.pack(p.trainable(), p.trainable_names).size
    adam = AdamState.zeros(n_params, lr=cfg.lr)
    ema = EmaState(decay=cfg.ema_decay) if cfg.estimator == "mine" else None
    records: List[StepRecord] = []
    step = 0
    for mi, steps in cfg.schedule:
        task = GaussianTask.from_mi(mi, cfg.dim, cfg.cubed)
        for _ in range(steps):
            step += 1
            joint = sample_task(task, cfg.batch_size, data_rng)
            batch = Batch(joint, make_marginal(joint, data_rng))
            try:
                eval_value = None
                if cfg.eval_batch:
                    held = sample_task(task, cfg.batch_size, data_rng)
                    eval_value = _held_out_bound(p, cfg.estimator, Batch(held, make_marginal(held, data_rng)), ema)
                fields, p, ema = train_step(p, cfg.estimator, cfg.reg, batch, adam, ema)
            except (DivergenceError, MagnitudeError, FloatingPointError) as exc:
                err = DivergenceError(f"training diverged at step {step}: {exc}", step=step)
                err.records = records
                raise err from exc
            rec = StepRecord(step=step, level_true_mi=mi, eval_value=eval_value, **fields)
            records.append(rec)
            if callback is not None:
                callback(rec)
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("step %d  true %.2f  estimate %.4f", step, mi, rec.bound_value)
    if return_critic:
        return records, p, ema
    return records


def _held_out_bound(p: Critic, estimator: str, batch: Batch, ema) -> float:
    f = critics.forward(p, batch.stacked())
    fj, fm = f[: batch.n], f[batch.n:]
    if estimator == "mine":
        a = ema.value if ema is not None and ema.initialized else float(np.exp(fm).mean())
        return estimators.tuba_value(fj, fm, a).value
    return estimators.evaluate(estimator, fj, fm, None)[1]


def _run_indexed(cfg: TrainConfig) -> List[StepRecord]:
    return run_trial(cfg)


def run_trials(cfg: TrainConfig, trials: int, workers: int = 1) -> List[List[StepRecord]]:
    """Independent trials ``0..trials-1`` of ``cfg``; results in trial order."""
    cfgs = [replace(cfg, trial=i) for i in range(trials)]
    if workers <= 1 or trials <= 1:
        return [run_trial(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_indexed, cfgs))


# ---------------------------------------------------------------- statistics


def level_segments(records: Sequence[StepRecord]) -> List[Tuple[float, List[StepRecord]]]:
    """Split a record stream into consecutive runs of equal true MI."""
    segments: List[Tuple[float, List[StepRecord]]] = []
    for rec in records:
        if segments and segments[-1][0] == rec.level_true_mi:
            segments[-1][1].append(rec)
        else:
            segments.append((rec.level_true_mi, [rec]))
    return segments


def tail(values: Sequence, frac: float) -> list:
    k = max(1, int(math.ceil(frac * len(values))))
    return list(values[-k:])


def aggregate_stats(trials: Sequence[Sequence[StepRecord]], tail_frac: float = 0.2) -> List[LevelStats]:
    if not trials:
        raise ParameterError("need at least one trial")
    if not 0 < tail_frac <= 1:
        raise ParameterError(f"tail_frac must lie in (0, 1], got {tail_frac}")
    pools: dict = {}
    for records in trials:
        for mi, seg in level_segments(records):
            pools.setdefault(mi, []).extend(r.bound_value for r in tail(seg, tail_frac))
    if not pools:
        raise ParameterError("no estimates to aggregate")
    return [stats_from_pool(mi, vals) for mi, vals in pools.items()]


def stats_from_pool(true_mi: float, values: Sequence[float]) -> LevelStats:
    est = np.asarray(values, dtype=np.float64)
    if est.size == 0:
        raise ParameterError(f"empty pool at true MI {true_mi}")
    err = est - true_mi
    return LevelStats(
        true_mi=float(true_mi),
        bias=float(err.mean()),
        variance=float(est.var()),
        rmse=float(np.sqrt(np.mean(err**2))),
        n_estimates=int(est.size),
    )


def ema_smooth(values: Sequence[float], decay: float) -> List[float]:
    if not 0 <= decay < 1:
        raise ParameterError(f"decay must lie in [0, 1), got {decay}")
    out: List[float] = []
    s = None
    for v in values:
        s = v if s is None else decay * s + (1.0 - decay) * v
        out.append(s)
    return out

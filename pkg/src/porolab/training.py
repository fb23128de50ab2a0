"""Losses, Adam optimization, the training loop and evaluation protocols.

Training pairs flatten (sample, day): every daily snapshot is an independent
supervised example whose input is the normalized permeability plus a
constant time channel.  Losses are computed on z-score-normalized targets;
reported metrics are relative L2 errors on denormalized (physical) fields.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from . import tensor as T
from .dataio import DatasetBundle, NormStats
from .tensor import Parameter, Tape, Tensor


# ---------------------------------------------------------------------------
# error norms
# ---------------------------------------------------------------------------

def rel_l2(pred: np.ndarray, target: np.ndarray) -> float:
    """||pred - target||_2 / ||target||_2 over flattened entries."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"rel_l2: shape mismatch {pred.shape} vs {target.shape}")
    denom = np.linalg.norm(target.ravel())
    if denom == 0.0:
        raise ValueError("rel_l2: zero-norm target")
    return float(np.linalg.norm((pred - target).ravel()) / denom)


def rel_h1(pred: np.ndarray, target: np.ndarray, h: float | None = None) -> float:
    """Relative discrete H1 error with forward-difference gradients.

    The difference quotient along each axis is scaled by 1/h (default
    h = 1/n per axis).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"rel_h1: shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target

    def _h1_sq(x):
        total = np.sum(x * x)
        for axis in range(x.ndim):
            inv_h = (1.0 / h) if h is not None else float(x.shape[axis])
            diff = np.diff(x, axis=axis) * inv_h
            total += np.sum(diff * diff)
        return total

    denom = _h1_sq(target)
    if denom == 0.0:
        raise ValueError("rel_h1: zero-norm target")
    return float(np.sqrt(_h1_sq(d) / denom))


def _batched_sq_norm(x: Tensor, loss_kind: str) -> Tensor:
    """Per-sample squared (semi-)norm [B] of a [B,1,H,W] tensor."""
    total = T.tensor_sum(T.mul(x, x), axes=(1, 2, 3))
    if loss_kind == "rel_h1":
        for axis, extent in ((2, x.shape[2]), (3, x.shape[3])):
            diff = T.forward_diff(x, axis, inv_h=float(extent))
            total = T.add(total, T.tensor_sum(T.mul(diff, diff), axes=(1, 2, 3)))
    return total


def batched_relative_loss(pred: Tensor, target: np.ndarray, loss_kind: str = "rel_l2",
                          denominators: np.ndarray | None = None) -> Tensor:
    """Mean over the batch of per-sample relative L2 (or H1) errors.

    ``denominators`` overrides the per-sample normalizing norms; the training
    loop passes the physical-field norms (divided by the target std) so the
    normalized-space loss equals the physical relative error exactly.
    """
    if loss_kind not in ("rel_l2", "rel_h1"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    tgt = Tensor(np.ascontiguousarray(target, dtype=pred.dtype))
    d = T.sub(pred, tgt)
    num = T.sqrt(_batched_sq_norm(d, loss_kind))
    if denominators is None:
        denom_sq = _batched_sq_norm(tgt, loss_kind).data
        if np.any(denom_sq == 0.0):
            raise ValueError("relative loss: zero-norm target in batch")
        denominators = np.sqrt(denom_sq)
    weights = (1.0 / np.asarray(denominators)) / pred.shape[0]
    return T.tensor_sum(T.mul(num, Tensor(weights.astype(pred.dtype))))


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 50
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_kind: str = "rel_l2"
    train_fraction: float = 0.8
    seed: int = 0
    target: str = "p"

    def __post_init__(self):
        if self.epochs <= 0 or self.lr <= 0:
            raise ValueError("epochs and lr must be positive")
        if self.loss_kind not in ("rel_l2", "rel_h1"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.target not in ("p", "sw"):
            raise ValueError(f"unknown target {self.target!r}")


class AdamState:
    """First/second moments and step counter, mirroring the parameter list."""

    def __init__(self, params: list[Parameter]):
        self.m = [np.zeros(p.data.shape, dtype=p.data.dtype) for p in params]
        self.v = [np.zeros(p.data.shape, dtype=p.data.dtype) for p in params]
        self.step = 0


def adam_step(params: list[Parameter], state: AdamState, cfg: TrainConfig) -> None:
    """One Adam update with bias correction and decoupled weight decay."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        # a parameter the loss never touched has an exactly-zero gradient
        # (e.g. the coarsest-level operator kernel when smooth_steps == 1)
        g = p.grad if p.grad is not None else 0.0
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.value.data = p.data - cfg.lr * update - cfg.lr * cfg.weight_decay * p.data


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------

class OracleModel:
    """Ground-truth replay predictor, used as a zero-error test stub."""

    kind = "oracle"

    def __init__(self, target_name: str = "p", bundle: DatasetBundle | None = None):
        self.target_name = target_name
        self.bundle = bundle
        self.stats = None
        self.t_max = 24.0
        self.seed = 0
        self.dtype = np.float64
        self.cfg = _OracleCfg(target_name)

    def bind(self, bundle: DatasetBundle) -> "OracleModel":
        self.bundle = bundle
        return self

    def parameters(self):
        return []

    def predict_fields(self, k, days, sample_index=None):
        if self.bundle is None or sample_index is None:
            raise ValueError("oracle predictor needs a bound dataset and sample index")
        truth = self.bundle.target(self.target_name)[sample_index]
        return np.asarray([truth[int(t)] for t in days], dtype=np.float64)


@dataclass
class _OracleCfg:
    target: str


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    val_rel_l2: float
    per_timestep: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seconds_per_sample: float = 0.0


def evaluate(model, bundle: DatasetBundle, indices, days=None):
    """Mean physical-space relative L2 over (sample, day) pairs, plus timing.

    Returns (mean error, per-day error vector, seconds per full time series).
    """
    if days is None:
        days = np.arange(bundle.n_days + 1)
    days = np.asarray(days)
    truth = bundle.target(getattr(model.cfg, "target", None) or model.stats.target_name)
    errors = np.empty((len(indices), len(days)))
    elapsed = 0.0
    for row, i in enumerate(indices):
        t0 = time.perf_counter()
        pred = model.predict_fields(bundle.k[i].astype(np.float64), days, sample_index=i)
        elapsed += time.perf_counter() - t0
        for col, day in enumerate(days):
            errors[row, col] = rel_l2(pred[col], truth[i, int(day)].astype(np.float64))
    return float(errors.mean()), errors.mean(axis=0), elapsed / max(len(indices), 1)


def per_timestep_error(model, bundle: DatasetBundle, indices) -> np.ndarray:
    """Mean relative L2 per day (vector of length T+1)."""
    _, vec, _ = evaluate(model, bundle, indices)
    return vec


def rollout_eval(model, extended: DatasetBundle, indices, seen_days: int = 24):
    """Per-day errors on an extended horizon; returns (vector, boundary index).

    The time channel runs past 1 for days beyond the training horizon; days
    0..seen_days were seen during training, later days were not.
    """
    vec = per_timestep_error(model, extended, indices)
    return vec, seen_days


def constant_mean_baseline(bundle: DatasetBundle, target_name: str,
                           train_indices, eval_indices) -> float:
    """Relative L2 of predicting the per-day training-mean field."""
    truth = bundle.target(target_name).astype(np.float64)
    mean_by_day = truth[np.asarray(train_indices)].mean(axis=0)
    errs = [rel_l2(mean_by_day[d], truth[i, d])
            for i in eval_indices for d in range(bundle.n_days + 1)]
    return float(np.mean(errs))


def throughput_report(model, bundle: DatasetBundle, cfg, indices):
    """Wall-clock seconds per full time series: surrogate vs simulator."""
    from .simulator import run_simulation

    days = np.arange(bundle.n_days + 1)
    t0 = time.perf_counter()
    for i in indices:
        model.predict_fields(bundle.k[i].astype(np.float64), days, sample_index=i)
    model_s = (time.perf_counter() - t0) / len(indices)
    t0 = time.perf_counter()
    for i in indices:
        run_simulation(bundle.k[i].astype(np.float64), cfg)
    sim_s = (time.perf_counter() - t0) / len(indices)
    return model_s, sim_s, sim_s / model_s


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

_COORD_CACHE: dict = {}


def _COORDS(nx: int, nz: int, dtype):
    """Cached normalized coordinate grids (x, z) in [0, 1]."""
    key = (nx, nz, np.dtype(dtype).str)
    if key not in _COORD_CACHE:
        xs = (np.linspace(0.0, 1.0, nx, dtype=dtype)[:, None]
              * np.ones((1, nz), dtype=dtype))
        zs = (np.ones((nx, 1), dtype=dtype)
              * np.linspace(0.0, 1.0, nz, dtype=dtype)[None, :])
        _COORD_CACHE[key] = (xs, zs)
    return _COORD_CACHE[key]


def _normalized_views(bundle: DatasetBundle, stats: NormStats, dtype):
    k_norm = stats.normalize_k(bundle.k.astype(np.float64)).astype(dtype)
    tgt = stats.normalize_target(
        bundle.target(stats.target_name).astype(np.float64)).astype(dtype)
    return k_norm, tgt


def _pair_denominators(bundle: DatasetBundle, stats: NormStats, loss_kind: str) -> np.ndarray:
    """Physical per-(sample, day) target norms scaled into normalized space.

    Dividing the normalized-space error norm by these reproduces the
    physical relative error, which is also the reported validation metric.
    """
    phys = bundle.target(stats.target_name).astype(np.float64)
    n, t1 = phys.shape[:2]
    sq = np.sum(phys ** 2, axis=(2, 3))
    if loss_kind == "rel_h1":
        for axis, extent in ((2, phys.shape[2]), (3, phys.shape[3])):
            diff = np.diff(phys, axis=axis) * float(extent)
            sq += np.sum(diff ** 2, axis=(2, 3))
    denom = np.sqrt(sq) / stats.target_std
    if np.any(denom == 0.0):
        raise ValueError("relative loss: zero-norm target snapshot")
    return denom


def train(model, bundle: DatasetBundle, cfg: TrainConfig, *,
          val_every: int = 1, log=None):
    """Train a model in place; returns the list of per-epoch metrics.

    The split takes the first ``train_fraction`` of samples (generation
    order) for training; batch order within an epoch is shuffled by a
    counter-based generator keyed on the config seed, so the whole run is a
    pure function of (dataset, config, seed).
    """
    if model.stats is None:
        raise ValueError("model needs normalization stats before training")
    n_train = int(np.ceil(bundle.n_samples * cfg.train_fraction))
    if n_train < 1 or n_train > bundle.n_samples:
        raise ValueError(f"empty or invalid split: {n_train} of {bundle.n_samples}")
    val_idx = np.arange(n_train, bundle.n_samples)
    days = bundle.n_days
    dtype = model.dtype
    k_norm, tgt_norm = _normalized_views(bundle, model.stats, dtype)
    denom_table = _pair_denominators(bundle, model.stats, cfg.loss_kind)

    pairs = np.stack(np.meshgrid(np.arange(n_train), np.arange(days + 1),
                                 indexing="ij"), axis=-1).reshape(-1, 2)
    if cfg.batch_size > len(pairs):
        raise ValueError(f"batch size {cfg.batch_size} exceeds training pairs {len(pairs)}")
    params = model.parameters()
    state = AdamState(params)
    nx, nz = bundle.grid
    in_ch = model.cfg.in_channels

    history: list[MetricsRecord] = []
    for epoch in range(cfg.epochs):
        order = Generator(Philox(key=cfg.seed, counter=epoch << 64)).permutation(len(pairs))
        losses = []
        for start in range(0, len(pairs) - cfg.batch_size + 1, cfg.batch_size):
            batch = pairs[order[start:start + cfg.batch_size]]
            bs = len(batch)
            x = np.empty((bs, in_ch, nx, nz), dtype=dtype)
            y = np.empty((bs, 1, nx, nz), dtype=dtype)
            denoms = np.empty(bs)
            for j, (si, day) in enumerate(batch):
                x[j, 0] = k_norm[si]
                x[j, 1] = day / model.t_max
                if in_ch == 4:
                    x[j, 2] = _COORDS(nx, nz, dtype)[0]
                    x[j, 3] = _COORDS(nx, nz, dtype)[1]
                y[j, 0] = tgt_norm[si, day]
                denoms[j] = denom_table[si, day]
            with Tape() as tape:
                pred = model.forward(Tensor(x))
                loss = batched_relative_loss(pred, y, cfg.loss_kind, denominators=denoms)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, step {start // cfg.batch_size}")
            for p in params:
                p.zero_grad()
            tape.backward(loss)
            adam_step(params, state, cfg)
            losses.append(value)
        record = MetricsRecord(epoch=epoch, train_loss=float(np.mean(losses)),
                               val_rel_l2=np.nan)
        if len(val_idx) and (epoch % val_every == 0 or epoch == cfg.epochs - 1):
            err, vec, secs = evaluate(model, bundle, val_idx)
            record.val_rel_l2 = err
            record.per_timestep = vec
            record.seconds_per_sample = secs
        history.append(record)
        if log is not None:
            log(record)
    return history

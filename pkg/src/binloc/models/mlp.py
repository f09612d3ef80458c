"""Per-band MLP azimuth classifier with greedy layer-growth training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .. import NUM_AZIMUTHS
from .normalizer import Normalizer, fit_normalizer

log = logging.getLogger(__name__)

Layer = tuple[np.ndarray, np.ndarray]  # (W: in x out, b: out)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class MlpBandModel:
    layers: list[Layer]
    normalizer: Normalizer
    band: int = 0
    # azimuth frequencies seen in training; None means they were uniform
    class_prior: np.ndarray | None = None

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    def posteriors(self, x: np.ndarray) -> np.ndarray:
        """Network output rescaled to a uniform azimuth prior.

        Unequal class counts in the training set would otherwise bias every
        band the same way and the bias compounds in the product over bands.
        """
        p = mlp_forward(self, x)
        if self.class_prior is None:
            return p
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(self.class_prior > 0, p / self.class_prior, 0.0)
        return q / q.sum(axis=-1, keepdims=True)


def init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)


def init_network(sizes, rng: np.random.Generator) -> list[Layer]:
    return [init_layer(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]


def _logits(layers, x) -> tuple[list[np.ndarray], np.ndarray]:
    acts = [x]
    h = x
    for w, b in layers[:-1]:
        h = expit(h @ w + b)
        acts.append(h)
    w, b = layers[-1]
    return acts, h @ w + b


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def network_forward(layers: list[Layer], x: np.ndarray) -> np.ndarray:
    """Softmax output for already-normalized inputs."""
    return softmax(_logits(layers, x)[1])


def mlp_forward(m: MlpBandModel, x) -> np.ndarray:
    """Azimuth posterior(s) for raw feature vector(s) of shape (D,) or (n, D)."""
    x = np.asarray(x, dtype=np.float64)
    return network_forward(m.layers, m.normalizer.apply(x))


def cross_entropy(layers: list[Layer], x: np.ndarray, y: np.ndarray) -> float:
    z = _logits(layers, x)[1]
    return float(np.mean(logsumexp(z, axis=1) - z[np.arange(len(y)), y]))


def mlp_gradient(layers: list[Layer], x: np.ndarray, y: np.ndarray) -> tuple[float, list[Layer]]:
    """Mean cross-entropy and its exact gradient w.r.t. every (W, b).

    `x` is the network input (normalized, noise already added); `y` holds
    class indices.
    """
    acts, z = _logits(layers, x)
    n = len(y)
    rows = np.arange(n)
    lse = logsumexp(z, axis=1)
    loss = float(np.mean(lse - z[rows, y]))
    delta = np.exp(z - lse[:, None])
    delta[rows, y] -= 1.0
    delta /= n
    grads: list[Layer] = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w = layers[i][0]
        a = acts[i]
        grads[i] = (a.T @ delta, delta.sum(axis=0))
        if i:
            delta = (delta @ w.T) * a * (1.0 - a)
    return loss, grads


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 128
    momentum: float = 0.5
    lr_initial: float = 1.0
    lr_final: float = 0.05
    lr_decay_epochs: int = 20
    lr_hold_epochs: int = 5
    early_stop_patience: int = 5
    input_noise_variance: float = 0.4
    hidden_sizes: tuple[int, ...] = (128, 128)
    validation_fraction: float = 0.1
    # desk-scale cap on epochs per growth phase; None runs the full schedule
    max_epochs_per_phase: int | None = None

    def __post_init__(self):
        if not 0 < self.lr_final < self.lr_initial:
            raise ValueError("need 0 < lr_final < lr_initial")
        if min(self.batch_size, self.lr_decay_epochs, self.early_stop_patience) <= 0:
            raise ValueError("batch size, decay epochs and patience must be positive")
        if self.lr_hold_epochs < 0 or self.input_noise_variance < 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid schedule")

    @property
    def epochs_per_phase(self) -> int:
        n = self.lr_decay_epochs + self.lr_hold_epochs
        return n if self.max_epochs_per_phase is None else min(n, self.max_epochs_per_phase)

    def learning_rate(self, epoch: int) -> float:
        """Linear decay over the first `lr_decay_epochs` epochs (0-based), then hold."""
        if epoch >= self.lr_decay_epochs - 1:
            return self.lr_final
        frac = epoch / (self.lr_decay_epochs - 1)
        return self.lr_initial + (self.lr_final - self.lr_initial) * frac


@dataclass
class PhaseHistory:
    hidden_layers: int
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator):
    """Index arrays (train, val); each class gives round(fraction*n) to val, keeping >= 1 for train."""
    train, val = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        k = min(int(round(fraction * idx.size)), idx.size - 1)
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _train_phase(layers, x, y, xv, yv, schedule: TrainSchedule, rng, phase: PhaseHistory, dtype):
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in layers]
    noise_std = np.sqrt(schedule.input_noise_variance)
    best = (np.inf, [(w.copy(), b.copy()) for w, b in layers])
    for epoch in range(schedule.epochs_per_phase):
        lr = schedule.learning_rate(epoch)
        total = 0.0
        for idx in epoch_batches(len(y), schedule.batch_size, rng):
            xb = x[idx]
            if noise_std > 0:
                xb = xb + (noise_std * rng.standard_normal(xb.shape)).astype(dtype)
            loss, grads = mlp_gradient(layers, xb, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {epoch} (lr={lr}) with "
                    f"{len(layers) - 1} hidden layer(s)")
            total += loss * len(idx)
            for (w, b), (vw, vb), (gw, gb) in zip(layers, velocity, grads):
                vw *= schedule.momentum
                vw -= lr * gw
                vb *= schedule.momentum
                vb -= lr * gb
                w += vw
                b += vb
        phase.train_loss.append(total / len(y))
        vloss = cross_entropy(layers, xv, yv) if len(yv) else phase.train_loss[-1]
        if not np.isfinite(vloss):
            raise TrainingDivergedError(f"validation loss became {vloss} at epoch {epoch}")
        phase.val_loss.append(vloss)
        if vloss < best[0]:
            best = (vloss, [(w.copy(), b.copy()) for w, b in layers])
            phase.best_epoch = epoch
        elif epoch - phase.best_epoch >= schedule.early_stop_patience:
            log.debug("early stop at epoch %d (best %d)", epoch, phase.best_epoch)
            break
    return best[1]


def mlp_train(x, azimuth_deg, schedule: TrainSchedule = TrainSchedule(), seed: int = 0,
              band: int = 0, grid_step_deg: int = 5, num_classes: int = NUM_AZIMUTHS,
              dtype=np.float32, require_coverage: bool = True
              ) -> tuple[MlpBandModel, list[PhaseHistory]]:
    """Train one band's classifier with layer growth (1 hidden layer, then 2, ...).

    Every azimuth class must have frames unless `require_coverage` is off
    (toy problems only).
    """
    x = np.asarray(x, dtype=np.float64)
    az = np.asarray(azimuth_deg)
    if x.ndim != 2 or len(x) != len(az) or len(x) == 0:
        raise ValueError("need a non-empty (n, D) feature array with one label per row")
    if not np.all(np.isfinite(x)):
        raise ValueError("training features must be finite")
    if np.any(np.mod(az, grid_step_deg) != 0) or np.any((az < 0) | (az >= 360)):
        raise ValueError("labels must lie on the azimuth grid in [0, 360)")
    y = (az // grid_step_deg).astype(np.int64)
    missing = sorted(set(range(num_classes)) - set(np.unique(y).tolist()))
    if missing and require_coverage:
        raise ValueError(f"band {band}: no training frames for azimuths "
                         f"{[m * grid_step_deg for m in missing]}")
    rng = np.random.default_rng(seed)
    tr, va = stratified_split(y, schedule.validation_fraction, rng)
    norm = fit_normalizer(x[tr])
    xt = norm.apply(x[tr]).astype(dtype)
    xv = norm.apply(x[va]).astype(dtype)
    yt, yv = y[tr], y[va]

    history = []
    sizes = [x.shape[1], *schedule.hidden_sizes, num_classes]
    layers: list[Layer] = []
    for depth in range(1, len(schedule.hidden_sizes) + 1):
        if depth == 1:
            layers = init_network([sizes[0], sizes[1], num_classes], rng)
        else:
            # keep trained hidden layers, insert a fresh one and a fresh output layer
            layers = layers[:-1] + init_network([sizes[depth - 1], sizes[depth], num_classes], rng)
        layers = [(w.astype(dtype), b.astype(dtype)) for w, b in layers]
        phase = PhaseHistory(hidden_layers=depth)
        layers = _train_phase(layers, xt, yt, xv, yv, schedule, rng, phase, dtype)
        history.append(phase)
        log.info("band %d: %d hidden layer(s), best epoch %d, val CE %.4f", band, depth,
                 phase.best_epoch, phase.val_loss[phase.best_epoch])
    layers = [(w.astype(np.float64), b.astype(np.float64)) for w, b in layers]
    prior = np.bincount(y, minlength=num_classes) / len(y)
    return MlpBandModel(layers, norm, band, prior), history

"""Loss, optimizer, split logic, training loop and metrics.

Training minimizes smooth-L1 loss on normalized targets with Adam plus
classic L2 regularization folded into the gradient.  Splits operate on
whole runs (windows never cross runs or splits), early stopping watches
the validation loss, and the returned checkpoint is the epoch with the
lowest validation loss seen.  Everything is deterministic in
(seed, data, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dataio, graph, models, ndiff as nd, sim
from .errors import ContractError, DivergenceError, ShapeError

_SPLIT_TAG = 0x53504C54
_TRAIN_TAG = 0x54524E


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 1e-4
    smooth_l1_beta: float = 0.01
    batch_size: int = 32
    max_epochs: int = 200
    early_stop_patience: int = 10
    early_stop_min_delta: float = 1e-4
    window: int = 10
    stride: int = 10
    seed: int = 0

    def __post_init__(self):
        positive = ("lr", "weight_decay", "smooth_l1_beta", "batch_size",
                    "max_epochs", "early_stop_patience", "early_stop_min_delta",
                    "window", "stride")
        for name in positive:
            if getattr(self, name) <= 0 and name != "weight_decay":
                raise ContractError(f"TrainConfig.{name} must be positive")
        if self.weight_decay < 0:
            raise ContractError("TrainConfig.weight_decay must be >= 0")


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    val_fraction_of_train: float = 0.1

    def __post_init__(self):
        for name in ("test_fraction", "val_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ContractError(f"SplitSpec.{name} must be in (0, 1)")


@dataclass
class Metrics:
    mae_lat_cm: float
    mae_lon_cm: float
    euclid_mae_cm: float
    n_samples: int


def smooth_l1(pred, target, beta):
    """Mean smooth-L1: quadratic inside |d| < beta, linear outside."""
    pred = nd.as_tensor(pred)
    target = nd.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError("smooth_l1", pred.shape, target.shape)
    return nd.mean_(nd.huber(nd.sub(pred, target), beta))


# ---------------------------------------------------------------------------
# Adam with L2-on-gradient


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params):
    return AdamState(
        m={n: np.zeros_like(t.data) for n, t in params.items() if t.requires_grad},
        v={n: np.zeros_like(t.data) for n, t in params.items() if t.requires_grad},
    )


def adam_step(params, grads, state, lr, weight_decay):
    """In-place update; L2 is folded into the gradient before the moments."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


# ---------------------------------------------------------------------------
# splits


def split_runs(runs, spec, seed):
    """Shuffle whole runs and cut (train, val, test); windows never cross."""
    n = len(runs)
    if n < 5:
        raise ContractError(f"need at least 5 runs to split, got {n}")
    order = np.random.default_rng(
        np.random.SeedSequence([int(seed), _SPLIT_TAG])).permutation(n)
    n_test = int(round(n * spec.test_fraction))
    n_test = min(max(n_test, 1), n - 2)
    pool = order[: n - n_test]
    test_idx = order[n - n_test :]
    n_val = math.ceil(len(pool) * spec.val_fraction_of_train)
    n_val = min(max(n_val, 1), len(pool) - 1)
    val_idx = pool[:n_val]
    train_idx = pool[n_val:]
    return ([runs[i] for i in train_idx],
            [runs[i] for i in val_idx],
            [runs[i] for i in test_idx])


@dataclass
class Datasets:
    train: list
    val: list
    test: list
    stats: graph.NormStats


def make_datasets(runs, cfg, split_spec=None, split_seed=None):
    """Split runs, window them, fit stats on train only, normalize all."""
    split_spec = split_spec or SplitSpec()
    split_seed = cfg.seed if split_seed is None else split_seed
    train_runs, val_runs, test_runs = split_runs(runs, split_spec, split_seed)

    def windows(rs):
        out = []
        for r in rs:
            out.extend(graph.windows_from_run(r, cfg.window, cfg.stride))
        return out

    raw_train = windows(train_runs)
    stats = graph.fit_norm_stats(raw_train)
    return Datasets(
        train=[graph.apply_norm(s, stats) for s in raw_train],
        val=[graph.apply_norm(s, stats) for s in windows(val_runs)],
        test=[graph.apply_norm(s, stats) for s in windows(test_runs)],
        stats=stats,
    )


# ---------------------------------------------------------------------------
# training loop


class EarlyStopper:
    """Keras-style patience on the validation loss.

    The checkpoint tracker is strict (any new minimum), the stopping
    counter only resets on improvements larger than min_delta.
    """

    def __init__(self, patience, min_delta):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.ckpt_best = math.inf
        self.bad_epochs = 0

    def update(self, value):
        """Returns True when `value` is a new strict minimum."""
        is_ckpt = value < self.ckpt_best
        if is_ckpt:
            self.ckpt_best = value
        if value < self.best - self.min_delta:
            self.best = value
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return is_ckpt

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


def _profile_of(samples):
    return sim.RECEIVERS[samples[0].labels[0]]


def _prepare_inputs(kind, samples, profile):
    if kind == "rgnn":
        return [models.pack_window(s) for s in samples]
    return models.stack_flat(samples, profile)


def _take(inputs, idx):
    if isinstance(inputs, list):
        return [inputs[i] for i in idx]
    return inputs[idx]


def _snapshot(params):
    return {n: nd.Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for n, t in params.items()}


def _batch_indices(n, batch_size):
    return [np.arange(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def _eval_loss(spec, params, inputs, targets, beta, batch_size):
    n = targets.shape[0]
    total = 0.0
    for idx in _batch_indices(n, batch_size):
        pred = models.forward_batch(spec, params, _take(inputs, idx), mode="eval")
        total += float(smooth_l1(pred, nd.tensor(targets[idx]), beta).data) * len(idx)
    return total / n


def build_spec(kind, samples, cfg, hidden_dim=256, dropout_rate=0.2):
    profile = _profile_of(samples)
    window = len(samples[0].snapshots)
    return models.ModelSpec(kind=kind, window=window,
                            k_max=profile.max_satellites,
                            hidden_dim=hidden_dim, dropout_rate=dropout_rate)


def train(kind, train_samples, val_samples, cfg, hidden_dim=256,
          dropout_rate=0.2):
    """Mini-batch loop with early stopping -> (best params, history).

    history rows are (epoch, train_loss, val_loss) with 1-based epochs.
    """
    if not train_samples or not val_samples:
        raise ContractError("train needs non-empty train and val window sets")
    spec = build_spec(kind, train_samples, cfg, hidden_dim, dropout_rate)
    profile = _profile_of(train_samples)

    inputs = _prepare_inputs(kind, train_samples, profile)
    targets = np.stack([s.target for s in train_samples])
    val_inputs = _prepare_inputs(kind, val_samples, profile)
    val_targets = np.stack([s.target for s in val_samples])

    ss = np.random.SeedSequence([int(cfg.seed), _TRAIN_TAG])
    init_rng, shuffle_rng, dropout_rng = (np.random.default_rng(c)
                                          for c in ss.spawn(3))
    params = models.init_params(spec, init_rng)
    state = adam_init(params)
    stopper = EarlyStopper(cfg.early_stop_patience, cfg.early_stop_min_delta)
    best = _snapshot(params)
    history = []
    n = len(train_samples)

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        running = 0.0
        for idx in _batch_indices(n, cfg.batch_size):
            batch_idx = order[idx]
            pred = models.forward_batch(spec, params, _take(inputs, batch_idx),
                                        mode="train", rng=dropout_rng)
            loss = smooth_l1(pred, nd.tensor(targets[batch_idx]),
                             cfg.smooth_l1_beta)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} (kind={kind}, "
                    f"lr={cfg.lr}, seed={cfg.seed})")
            for t in params.values():
                t.zero_grad()
            nd.backward(loss)
            grads = {name: t.grad for name, t in params.items()
                     if t.requires_grad and t.grad is not None}
            adam_step(params, grads, state, cfg.lr, cfg.weight_decay)
            running += loss_val * len(batch_idx)

        train_loss = running / n
        val_loss = _eval_loss(spec, params, val_inputs, val_targets,
                              cfg.smooth_l1_beta, cfg.batch_size)
        history.append((epoch, train_loss, val_loss))
        if stopper.update(val_loss):
            best = _snapshot(params)
        if stopper.should_stop:
            break

    return best, history


def save_history(history, path):
    rows = [{"epoch": e, "train_loss": tl, "val_loss": vl}
            for e, tl, vl in history]
    dataio.write_csv_table(path, ("epoch", "train_loss", "val_loss"), rows)


def load_history(path):
    _, rows = dataio.read_csv_table(path)
    return [(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]))
            for r in rows]


# ---------------------------------------------------------------------------
# evaluation


def metrics_from_errors(err_lat, err_lon):
    return Metrics(
        mae_lat_cm=float(np.mean(np.abs(err_lat))),
        mae_lon_cm=float(np.mean(np.abs(err_lon))),
        euclid_mae_cm=float(np.mean(np.hypot(err_lat, err_lon))),
        n_samples=len(err_lat),
    )


def predict(params, samples, stats, batch_size=256, hidden_dim=None,
            dropout_rate=0.2):
    """Eval-mode predictions denormalized to centimeters, (N, 2)."""
    kind = models.model_kind_of(params)
    profile = _profile_of(samples)
    hidden = models.hidden_dim_of(params) if kind == "rgnn" else 256
    spec = models.ModelSpec(kind=kind, window=len(samples[0].snapshots),
                            k_max=profile.max_satellites, hidden_dim=hidden,
                            dropout_rate=dropout_rate)
    inputs = _prepare_inputs(kind, samples, profile)
    preds = []
    for idx in _batch_indices(len(samples), batch_size):
        out = models.forward_batch(spec, params, _take(inputs, idx), mode="eval")
        preds.append(out.data)
    return graph.denorm_target(np.concatenate(preds), stats)


def evaluate(params, test_samples, stats, batch_size=256):
    """Per-axis and Euclidean MAE in centimeters over held-out windows."""
    if not test_samples:
        raise ContractError("evaluate needs a non-empty test set")
    preds_cm = predict(params, test_samples, stats, batch_size)
    targets_cm = np.stack([graph.denorm_target(s.target, stats)
                           for s in test_samples])
    err = preds_cm - targets_cm
    return metrics_from_errors(err[:, 0], err[:, 1])


def mean_predictor_metrics(train_samples, test_samples, stats):
    """Baseline that always predicts the training-set mean deviation."""
    if not test_samples:
        raise ContractError("evaluate needs a non-empty test set")
    mean_norm = np.mean([s.target for s in train_samples], axis=0)
    const_cm = graph.denorm_target(mean_norm, stats)
    targets_cm = np.stack([graph.denorm_target(s.target, stats)
                           for s in test_samples])
    err = const_cm[None, :] - targets_cm
    return metrics_from_errors(err[:, 0], err[:, 1])


def aggregate_seeds(metrics_list):
    """Arithmetic mean and sample sd per metric; sd is None for n = 1."""
    if not metrics_list:
        raise ContractError("aggregate_seeds needs at least one entry")
    arr = np.array([[m.mae_lat_cm, m.mae_lon_cm, m.euclid_mae_cm]
                    for m in metrics_list])
    n = sum(m.n_samples for m in metrics_list)
    mean = Metrics(*(float(v) for v in arr.mean(axis=0)), n_samples=n)
    if len(metrics_list) < 2:
        return mean, None
    sd = Metrics(*(float(v) for v in arr.std(axis=0, ddof=1)), n_samples=n)
    return mean, sd

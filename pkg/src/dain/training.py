"""Mean-squared-error training loop with Adam.

Embedding tables get the lazy sparse treatment: a row's Adam moments
and parameters move only in steps whose batch actually touched that
row. This deviates from dense Adam on purpose (untouched rows would
otherwise decay their moments every step) and is what makes training
on large id spaces affordable.

Everything here is deterministic: given the same initial model, the
same interaction order, and the same config seed, two runs produce bit
for bit identical parameters and loss traces.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .model import DainGradients, DainModel, MfGradients, MfModel
from .numerics import STREAM_SHUFFLE, SeededRng


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 30
    seed: int = 42
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    shuffle: bool = True
    weight_decay: float = 0.0  # L2 on MLP weights; off by default

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class EpochStats:
    epoch_index: int
    mean_train_loss: float
    examples_seen: int
    wall_time: float


@dataclass
class AdamState:
    """First/second moment mirrors of every model parameter.

    Embedding (and MF bias) moments are stored dense but only rows named
    in a step's sparse gradient maps are ever read or written.
    """

    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model) -> "AdamState":
        state = cls()
        shapes = _param_shapes(model)
        for name, shape in shapes.items():
            state.m[name] = np.zeros(shape)
            state.v[name] = np.zeros(shape)
        return state


def _param_shapes(model) -> dict:
    shapes = {
        "user_table": model.user_table.table.shape,
        "item_table": model.item_table.table.shape,
    }
    if isinstance(model, DainModel):
        for l, layer in enumerate(model.layers):
            shapes[f"w{l}"] = layer.weights.shape
            shapes[f"b{l}"] = layer.bias.shape
    elif isinstance(model, MfModel):
        shapes["user_bias"] = model.user_bias.shape
        shapes["item_bias"] = model.item_bias.shape
        shapes["global_bias"] = (1,)
    else:
        raise ValueError(f"no optimizer support for {type(model).__name__}")
    return shapes


def mse_loss(preds, targets) -> float:
    """Mean of squared differences."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {targets.shape} targets")
    if preds.size == 0:
        raise ValueError("mse_loss of empty lists")
    if targets.min() < 0.0 or targets.max() > 1.0:
        raise ValueError("targets must lie in [0, 1]")
    d = preds - targets
    return float(np.mean(d * d))


def mse_grad(pred: float, target: float, n: int) -> float:
    """d/d(pred) of the size-n mean squared error: 2 (pred - target) / n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 2.0 * (pred - target) / n


def _adam_dense(param, grad, m, v, t, cfg):
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)


def _adam_rows(param, row_grads: dict, m, v, t, cfg):
    if not row_grads:
        return
    rows = np.fromiter(row_grads.keys(), dtype=np.int64, count=len(row_grads))
    grad = np.stack([np.atleast_1d(np.asarray(g, dtype=np.float64)) for g in row_grads.values()])
    if param.ndim == 1:
        grad = grad[:, 0]
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m[rows] = b1 * m[rows] + (1.0 - b1) * grad
    v[rows] = b2 * v[rows] + (1.0 - b2) * grad * grad
    m_hat = m[rows] / (1.0 - b1 ** t)
    v_hat = v[rows] / (1.0 - b2 ** t)
    param[rows] -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)


def adam_step(model, grads, state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place.

    Dense parameters always move; embedding rows (and MF per-id biases)
    move only if present in the sparse gradient maps.
    """
    state.step_count += 1
    t = state.step_count
    if isinstance(model, DainModel):
        if not isinstance(grads, DainGradients) or len(grads.layer_weight_grads) != len(model.layers):
            raise ValueError("gradient structure does not mirror the model")
        for l, layer in enumerate(model.layers):
            gw = grads.layer_weight_grads[l]
            gb = grads.layer_bias_grads[l]
            if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
                raise ValueError(f"layer {l} gradient shape mismatch")
            if cfg.weight_decay:
                gw = gw + cfg.weight_decay * layer.weights
            _adam_dense(layer.weights, gw, state.m[f"w{l}"], state.v[f"w{l}"], t, cfg)
            _adam_dense(layer.bias, gb, state.m[f"b{l}"], state.v[f"b{l}"], t, cfg)
    elif isinstance(model, MfModel):
        if not isinstance(grads, MfGradients):
            raise ValueError("gradient structure does not mirror the model")
        _adam_rows(model.user_bias, grads.user_bias_grads, state.m["user_bias"], state.v["user_bias"], t, cfg)
        _adam_rows(model.item_bias, grads.item_bias_grads, state.m["item_bias"], state.v["item_bias"], t, cfg)
        gb = np.array([grads.global_bias_grad])
        holder = np.array([model.global_bias])
        _adam_dense(holder, gb, state.m["global_bias"], state.v["global_bias"], t, cfg)
        model.global_bias = float(holder[0])
    else:
        raise ValueError(f"no optimizer support for {type(model).__name__}")
    for name, table in (("user_table", model.user_table), ("item_table", model.item_table)):
        row_grads = grads.user_grads if name == "user_table" else grads.item_grads
        for rid, g in row_grads.items():
            if not 0 <= rid < table.num_rows or np.shape(g) != (table.dim,):
                raise ValueError(f"{name} gradient for row {rid} has the wrong shape or id")
        _adam_rows(table.table, row_grads, state.m[name], state.v[name], t, cfg)


def train_epoch(model, dataset, state: AdamState, cfg: TrainConfig, rng: SeededRng,
                epoch_index: int = 1) -> EpochStats:
    """One pass over the dataset in seeded-shuffle order.

    Batches are ``cfg.batch_size`` rows (final partial batch kept); each
    batch contributes its own mean-MSE gradient and exactly one Adam
    step. The reported loss is the epoch mean of pre-update squared
    errors.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    started = time.monotonic()
    order = rng.permutation(n) if cfg.shuffle else np.arange(n)
    sq_sum = 0.0
    for lo in range(0, n, cfg.batch_size):
        rows = order[lo : lo + cfg.batch_size]
        users = dataset.users[rows]
        items = dataset.items[rows]
        targets = dataset.ratings[rows]
        b = rows.shape[0]
        if isinstance(model, DainModel):
            if model.uses_context:
                trace = model.forward_batch(users, items, dataset.hours[rows], dataset.weekdays[rows])
            else:
                trace = model.forward_batch(users, items)
            y_hat = trace.y_hat
            dl_dy = 2.0 * (y_hat - targets) / b
            grads = model.backward_batch(trace, dl_dy)
        else:
            y_hat = model.forward_batch(users, items)
            dl_dy = 2.0 * (y_hat - targets) / b
            grads = model.backward_batch(users, items, y_hat, dl_dy)
        diff = y_hat - targets
        sq_sum += float(diff @ diff)
        adam_step(model, grads, state, cfg)
    return EpochStats(
        epoch_index=epoch_index,
        mean_train_loss=sq_sum / n,
        examples_seen=n,
        wall_time=time.monotonic() - started,
    )


def fit(model, train_set, cfg: TrainConfig):
    """Run ``cfg.epochs`` epochs; returns (model, per-epoch stats).

    The model is updated in place. No early stopping: the trace always
    has exactly ``cfg.epochs`` entries.
    """
    state = AdamState.for_model(model)
    rng = SeededRng(cfg.seed, STREAM_SHUFFLE)
    trace = []
    for e in range(cfg.epochs):
        trace.append(train_epoch(model, train_set, state, cfg, rng, epoch_index=e + 1))
    return model, trace


def _named_params(model):
    """(name, array, analytic-grad getter) triples covering every parameter."""
    if isinstance(model, DainModel):
        entries = [
            ("user_table", model.user_table.table, lambda g: _rows_to_dense(g.user_grads, model.user_table.table.shape)),
            ("item_table", model.item_table.table, lambda g: _rows_to_dense(g.item_grads, model.item_table.table.shape)),
        ]
        for l, layer in enumerate(model.layers):
            entries.append((f"w{l}", layer.weights, lambda g, l=l: g.layer_weight_grads[l]))
            entries.append((f"b{l}", layer.bias, lambda g, l=l: g.layer_bias_grads[l]))
        return entries
    entries = [
        ("user_table", model.user_table.table, lambda g: _rows_to_dense(g.user_grads, model.user_table.table.shape)),
        ("item_table", model.item_table.table, lambda g: _rows_to_dense(g.item_grads, model.item_table.table.shape)),
        ("user_bias", model.user_bias, lambda g: _scalars_to_dense(g.user_bias_grads, model.user_bias.shape)),
        ("item_bias", model.item_bias, lambda g: _scalars_to_dense(g.item_bias_grads, model.item_bias.shape)),
    ]
    return entries


def _rows_to_dense(row_grads: dict, shape) -> np.ndarray:
    out = np.zeros(shape)
    for rid, g in row_grads.items():
        out[rid] = g
    return out


def _scalars_to_dense(scalar_grads: dict, shape) -> np.ndarray:
    out = np.zeros(shape)
    for rid, g in scalar_grads.items():
        out[rid] = g
    return out


def grad_check(model, example, eps: float, grad_scale: float = 1.0) -> float:
    """Largest relative disagreement between the analytic backward pass
    and central finite differences of the squared error on one example.

    ``example`` is (u, i, ctx, target) with ctx None for context-free
    models. Relative error is |a - b| / max(|a|, |b|, 1e-8). The
    ``grad_scale`` hook multiplies the analytic side and exists so a
    deliberately broken gradient is provably detected.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    u, i, ctx, target = example

    if isinstance(model, DainModel):
        def loss():
            return (model.forward(u, i, ctx).y_hat - target) ** 2
        trace = model.forward(u, i, ctx)
        grads = model.backward(trace, 2.0 * (trace.y_hat - target))
    else:
        def loss():
            return (model.forward(u, i) - target) ** 2
        y = model.forward(u, i)
        grads = model.backward(u, i, 2.0 * (y - target))

    max_rel = 0.0
    for _, param, grad_of in _named_params(model):
        analytic = grad_scale * np.asarray(grad_of(grads), dtype=np.float64)
        flat = param.reshape(-1)
        aflat = analytic.reshape(-1)
        for idx in range(flat.shape[0]):
            keep = flat[idx]
            flat[idx] = keep + eps
            lp = loss()
            flat[idx] = keep - eps
            lm = loss()
            flat[idx] = keep
            numeric = (lp - lm) / (2.0 * eps)
            rel = abs(aflat[idx] - numeric) / max(abs(aflat[idx]), abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
    if isinstance(model, MfModel):
        keep = model.global_bias
        model.global_bias = keep + eps
        lp = (model.forward(u, i) - target) ** 2
        model.global_bias = keep - eps
        lm = (model.forward(u, i) - target) ** 2
        model.global_bias = keep
        numeric = (lp - lm) / (2.0 * eps)
        analytic = grad_scale * grads.global_bias_grad
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel

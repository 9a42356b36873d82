"""Scoring models: the context-aware embedding+MLP network, a biased
matrix-factorization baseline, and a popularity baseline.

The main network looks up one user row and one item row, optionally
appends a one-hot time context (24 hour buckets + 7 weekday buckets),
pushes the concatenation through a ReLU MLP ending in a single linear
unit, and squashes that scalar through a sigmoid. Backward passes are
hand-derived reverse-mode differentiation; embedding gradients come
back as sparse per-row maps so optimizers never touch unused rows.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    SeededRng,
    glorot_uniform,
    matvec,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_array,
)

HOUR_BUCKETS = 24
WEEKDAY_BUCKETS = 7
CONTEXT_WIDTH = HOUR_BUCKETS + WEEKDAY_BUCKETS


@dataclass
class EmbeddingTable:
    """Dense lookup table, one float64 row per id."""

    num_rows: int
    dim: int
    table: np.ndarray

    def __post_init__(self):
        if self.table.shape != (self.num_rows, self.dim):
            raise ValueError(
                f"embedding table shape {self.table.shape} does not match "
                f"({self.num_rows}, {self.dim})"
            )

    def lookup(self, idx: int) -> np.ndarray:
        """Copy of row ``idx``. Out-of-range ids are rejected."""
        if not 0 <= idx < self.num_rows:
            raise ValueError(f"id {idx} out of range for table with {self.num_rows} rows")
        return self.table[idx].copy()


@dataclass
class MlpLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str  # "relu" or "identity"

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("layer weights must be 2-D and bias 1-D")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} does not match weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class ContextSpec:
    """One-hot time context: hour of day followed by day of week."""

    enabled: bool
    hour_buckets: int = HOUR_BUCKETS
    weekday_buckets: int = WEEKDAY_BUCKETS

    @property
    def width(self) -> int:
        return self.hour_buckets + self.weekday_buckets if self.enabled else 0


def encode_context(spec: ContextSpec, hour: int, weekday: int) -> np.ndarray:
    """Length-31 one-hot pair: position ``hour`` and position ``24 + weekday``."""
    if not spec.enabled:
        raise ValueError("context encoding requested but context is disabled")
    if not 0 <= hour < spec.hour_buckets:
        raise ValueError(f"hour {hour} outside [0, {spec.hour_buckets})")
    if not 0 <= weekday < spec.weekday_buckets:
        raise ValueError(f"weekday {weekday} outside [0, {spec.weekday_buckets})")
    vec = np.zeros(spec.hour_buckets + spec.weekday_buckets)
    vec[hour] = 1.0
    vec[spec.hour_buckets + weekday] = 1.0
    return vec


@dataclass
class PredictionTrace:
    """Everything forward computed, kept for the backward pass."""

    u: int
    i: int
    ctx: tuple | None
    x0: np.ndarray
    pre_acts: list
    post_acts: list
    y_hat: float
    fingerprint: str


@dataclass
class BatchTrace:
    users: np.ndarray
    items: np.ndarray
    x0: np.ndarray  # (B, in_dim)
    pre_acts: list  # per layer, (B, out_dim)
    post_acts: list
    y_hat: np.ndarray  # (B,)
    fingerprint: str


@dataclass
class DainGradients:
    """Mirror of the network parameters; embedding entries only for the
    rows the example(s) actually touched."""

    layer_weight_grads: list
    layer_bias_grads: list
    user_grads: dict
    item_grads: dict


@dataclass
class MfGradients:
    user_grads: dict
    item_grads: dict
    user_bias_grads: dict
    item_bias_grads: dict
    global_bias_grad: float


@dataclass
class ModelConfig:
    kind: str = "dain"  # "dain" or "mf"
    embedding_dim: int = 64
    hidden_layers: tuple = (128, 64, 32)
    context_enabled: bool = True

    def __post_init__(self):
        if self.kind not in ("dain", "mf"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if any(int(h) < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be >= 1")
        if self.kind == "mf" and self.context_enabled:
            raise ValueError("the mf model has no context path")


def _fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def dain_fingerprint(num_users, num_items, dim, layer_out_dims, context: ContextSpec) -> str:
    chain = ",".join(str(d) for d in layer_out_dims)
    return _fingerprint(
        f"dain|users={num_users}|items={num_items}|dim={dim}|layers={chain}"
        f"|context={int(context.enabled)}|hours={context.hour_buckets}"
        f"|weekdays={context.weekday_buckets}"
    )


def mf_fingerprint(num_users, num_items, dim) -> str:
    return _fingerprint(f"mf|users={num_users}|items={num_items}|dim={dim}")


@dataclass
class DainModel:
    user_table: EmbeddingTable
    item_table: EmbeddingTable
    layers: list
    context: ContextSpec
    arch_fingerprint: str = field(default="")

    def __post_init__(self):
        k = self.user_table.dim
        if self.item_table.dim != k:
            raise ValueError("user and item embedding dims differ")
        expected_in = 2 * k + self.context.width
        if not self.layers:
            raise ValueError("model needs at least the output layer")
        for idx, layer in enumerate(self.layers):
            if layer.in_dim != expected_in:
                raise ValueError(
                    f"layer {idx} expects input width {layer.in_dim}, chain provides {expected_in}"
                )
            expected_in = layer.out_dim
        last = self.layers[-1]
        if last.out_dim != 1 or last.activation != "identity":
            raise ValueError("final layer must be a single identity unit")
        if not self.arch_fingerprint:
            self.arch_fingerprint = dain_fingerprint(
                self.user_table.num_rows,
                self.item_table.num_rows,
                k,
                [l.out_dim for l in self.layers],
                self.context,
            )

    @property
    def num_users(self) -> int:
        return self.user_table.num_rows

    @property
    def num_items(self) -> int:
        return self.item_table.num_rows

    @property
    def uses_context(self) -> bool:
        return self.context.enabled

    def _input_vector(self, u: int, i: int, ctx) -> np.ndarray:
        if self.context.enabled:
            if ctx is None:
                raise ValueError("model is context-enabled but no (hour, weekday) was supplied")
            hour, weekday = ctx
            parts = [self.user_table.lookup(u), self.item_table.lookup(i),
                     encode_context(self.context, hour, weekday)]
        else:
            if ctx is not None:
                raise ValueError("model is context-disabled but a context was supplied")
            parts = [self.user_table.lookup(u), self.item_table.lookup(i)]
        return np.concatenate(parts)

    def forward(self, u: int, i: int, ctx=None) -> PredictionTrace:
        """Score one (user, item[, context]) triple.

        Returns the full trace: input vector, every pre/post-activation,
        and the sigmoid output in (0, 1).
        """
        x0 = self._input_vector(u, i, ctx)
        pre_acts, post_acts = [], []
        h = x0
        for layer in self.layers:
            pre = matvec(layer.weights, h) + layer.bias
            post = relu(pre) if layer.activation == "relu" else pre
            pre_acts.append(pre)
            post_acts.append(post)
            h = post
        y_hat = sigmoid(float(h[0]))
        return PredictionTrace(u, i, ctx, x0, pre_acts, post_acts, y_hat, self.arch_fingerprint)

    def predict_batch(self, u: int, items, ctx=None) -> np.ndarray:
        """Scores for one user against a list of items.

        Every id is validated before any scoring happens, and each score
        equals the corresponding single forward call bit for bit.
        """
        items = list(items)
        if not 0 <= u < self.num_users:
            raise ValueError(f"id {u} out of range for table with {self.num_users} rows")
        for i in items:
            if not 0 <= i < self.num_items:
                raise ValueError(f"id {i} out of range for table with {self.num_items} rows")
        return np.array([self.forward(u, i, ctx).y_hat for i in items], dtype=np.float64)

    def backward(self, trace: PredictionTrace, dl_dy: float) -> DainGradients:
        """Gradients of a scalar loss w.r.t. every parameter, given
        dl/dy_hat for the traced example.

        Context one-hots are inputs, not parameters, so nothing flows
        to them. Only rows ``trace.u`` / ``trace.i`` appear in the
        sparse maps.
        """
        if trace.fingerprint != self.arch_fingerprint:
            raise ValueError("trace was produced by a different model architecture")
        if len(trace.pre_acts) != len(self.layers):
            raise ValueError("trace layer count does not match the model")
        y = trace.y_hat
        d_pre = np.array([dl_dy * y * (1.0 - y)])
        weight_grads = [None] * len(self.layers)
        bias_grads = [None] * len(self.layers)
        for l in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[l]
            h_prev = trace.post_acts[l - 1] if l > 0 else trace.x0
            weight_grads[l] = np.outer(d_pre, h_prev)
            bias_grads[l] = d_pre.copy()
            d_post_prev = layer.weights.T @ d_pre
            if l > 0:
                prev = self.layers[l - 1]
                d_pre = (
                    relu_backward(trace.pre_acts[l - 1], d_post_prev)
                    if prev.activation == "relu"
                    else d_post_prev
                )
            else:
                d_x0 = d_post_prev
        k = self.user_table.dim
        return DainGradients(
            layer_weight_grads=weight_grads,
            layer_bias_grads=bias_grads,
            user_grads={trace.u: d_x0[:k]},
            item_grads={trace.i: d_x0[k : 2 * k]},
        )

    def forward_batch(self, users: np.ndarray, items: np.ndarray, hours=None, weekdays=None) -> BatchTrace:
        """Vectorized forward over aligned id arrays (training fast path)."""
        users = np.asarray(users)
        items = np.asarray(items)
        if users.min(initial=0) < 0 or (users.size and users.max() >= self.num_users):
            raise ValueError("user id out of range in batch")
        if items.min(initial=0) < 0 or (items.size and items.max() >= self.num_items):
            raise ValueError("item id out of range in batch")
        cols = [self.user_table.table[users], self.item_table.table[items]]
        if self.context.enabled:
            if hours is None or weekdays is None:
                raise ValueError("model is context-enabled but no (hour, weekday) was supplied")
            ctx = np.zeros((users.shape[0], CONTEXT_WIDTH))
            rows = np.arange(users.shape[0])
            ctx[rows, hours] = 1.0
            ctx[rows, HOUR_BUCKETS + np.asarray(weekdays)] = 1.0
            cols.append(ctx)
        elif hours is not None or weekdays is not None:
            raise ValueError("model is context-disabled but a context was supplied")
        x0 = np.hstack(cols)
        pre_acts, post_acts = [], []
        h = x0
        for layer in self.layers:
            pre = h @ layer.weights.T + layer.bias
            post = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
            pre_acts.append(pre)
            post_acts.append(post)
            h = post
        y_hat = sigmoid_array(h[:, 0])
        return BatchTrace(users, items, x0, pre_acts, post_acts, y_hat, self.arch_fingerprint)

    def backward_batch(self, trace: BatchTrace, dl_dy: np.ndarray) -> DainGradients:
        """Summed gradients over a batch; embedding rows aggregated per id."""
        if trace.fingerprint != self.arch_fingerprint:
            raise ValueError("trace was produced by a different model architecture")
        y = trace.y_hat
        d_pre = (dl_dy * y * (1.0 - y))[:, None]
        weight_grads = [None] * len(self.layers)
        bias_grads = [None] * len(self.layers)
        for l in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[l]
            h_prev = trace.post_acts[l - 1] if l > 0 else trace.x0
            weight_grads[l] = d_pre.T @ h_prev
            bias_grads[l] = d_pre.sum(axis=0)
            d_post_prev = d_pre @ layer.weights
            if l > 0:
                if self.layers[l - 1].activation == "relu":
                    d_pre = np.where(trace.pre_acts[l - 1] > 0.0, d_post_prev, 0.0)
                else:
                    d_pre = d_post_prev
            else:
                d_x0 = d_post_prev
        k = self.user_table.dim
        return DainGradients(
            layer_weight_grads=weight_grads,
            layer_bias_grads=bias_grads,
            user_grads=_row_sums(trace.users, d_x0[:, :k]),
            item_grads=_row_sums(trace.items, d_x0[:, k : 2 * k]),
        )


def _row_sums(ids: np.ndarray, rows: np.ndarray) -> dict:
    """Aggregate per-example row gradients into {id: summed row}."""
    uniq, inverse = np.unique(ids, return_inverse=True)
    acc = np.zeros((uniq.shape[0], rows.shape[1]))
    np.add.at(acc, inverse, rows)
    return {int(uid): acc[j] for j, uid in enumerate(uniq)}


@dataclass
class MfModel:
    """Biased matrix factorization squashed through a sigmoid:
    y = sigmoid(g + b_u + b_i + p_u . q_i)."""

    user_table: EmbeddingTable
    item_table: EmbeddingTable
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_bias: float
    arch_fingerprint: str = field(default="")

    def __post_init__(self):
        if self.user_bias.shape[0] != self.user_table.num_rows:
            raise ValueError("user bias length does not match the user table")
        if self.item_bias.shape[0] != self.item_table.num_rows:
            raise ValueError("item bias length does not match the item table")
        if not self.arch_fingerprint:
            self.arch_fingerprint = mf_fingerprint(
                self.user_table.num_rows, self.item_table.num_rows, self.user_table.dim
            )

    @property
    def num_users(self) -> int:
        return self.user_table.num_rows

    @property
    def num_items(self) -> int:
        return self.item_table.num_rows

    @property
    def uses_context(self) -> bool:
        return False

    def forward(self, u: int, i: int) -> float:
        p = self.user_table.lookup(u)
        q = self.item_table.lookup(i)
        z = self.global_bias + self.user_bias[u] + self.item_bias[i] + float(p @ q)
        return sigmoid(z)

    def predict_batch(self, u: int, items, ctx=None) -> np.ndarray:
        if ctx is not None:
            raise ValueError("mf model takes no context")
        items = list(items)
        if not 0 <= u < self.num_users:
            raise ValueError(f"id {u} out of range for table with {self.num_users} rows")
        for i in items:
            if not 0 <= i < self.num_items:
                raise ValueError(f"id {i} out of range for table with {self.num_items} rows")
        return np.array([self.forward(u, i) for i in items], dtype=np.float64)

    def backward(self, u: int, i: int, dl_dy: float) -> MfGradients:
        y = self.forward(u, i)
        dz = dl_dy * y * (1.0 - y)
        return MfGradients(
            user_grads={u: dz * self.item_table.lookup(i)},
            item_grads={i: dz * self.user_table.lookup(u)},
            user_bias_grads={u: dz},
            item_bias_grads={i: dz},
            global_bias_grad=dz,
        )

    def forward_batch(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        p = self.user_table.table[users]
        q = self.item_table.table[items]
        z = (
            self.global_bias
            + self.user_bias[users]
            + self.item_bias[items]
            + np.einsum("ij,ij->i", p, q)
        )
        return sigmoid_array(z)

    def backward_batch(self, users, items, y_hat, dl_dy) -> MfGradients:
        dz = dl_dy * y_hat * (1.0 - y_hat)
        user_rows = _row_sums(users, dz[:, None] * self.item_table.table[items])
        item_rows = _row_sums(items, dz[:, None] * self.user_table.table[users])
        ub = _scalar_sums(users, dz)
        ib = _scalar_sums(items, dz)
        return MfGradients(user_rows, item_rows, ub, ib, float(dz.sum()))


def _scalar_sums(ids: np.ndarray, vals: np.ndarray) -> dict:
    uniq, inverse = np.unique(ids, return_inverse=True)
    acc = np.zeros(uniq.shape[0])
    np.add.at(acc, inverse, vals)
    return {int(uid): float(acc[j]) for j, uid in enumerate(uniq)}


class PopularityModel:
    """Non-personalized baseline: an item's score is its training
    interaction count (ranking cares only about order)."""

    def __init__(self, num_users: int, item_counts: np.ndarray):
        self._num_users = num_users
        self._counts = np.asarray(item_counts, dtype=np.float64)

    @classmethod
    def from_dataset(cls, ds) -> "PopularityModel":
        counts = np.bincount(ds.items, minlength=ds.num_items)
        return cls(ds.num_users, counts)

    @property
    def num_users(self) -> int:
        return self._num_users

    @property
    def num_items(self) -> int:
        return self._counts.shape[0]

    @property
    def uses_context(self) -> bool:
        return False

    def predict_batch(self, u: int, items, ctx=None) -> np.ndarray:
        if ctx is not None:
            raise ValueError("popularity model takes no context")
        return self._counts[np.asarray(list(items), dtype=np.int64)]


def init_model(config: ModelConfig, num_users: int, num_items: int, rng: SeededRng):
    """Fresh model with Glorot-uniform tables/weights and zero biases.

    Draw order is fixed (user table, item table, then layers front to
    back) so one seed always yields the same parameters.
    """
    if num_users < 1 or num_items < 1:
        raise ValueError("need at least one user and one item")
    k = config.embedding_dim
    user_table = EmbeddingTable(num_users, k, glorot_uniform(rng, k, num_users))
    item_table = EmbeddingTable(num_items, k, glorot_uniform(rng, k, num_items))
    if config.kind == "mf":
        return MfModel(
            user_table=user_table,
            item_table=item_table,
            user_bias=np.zeros(num_users),
            item_bias=np.zeros(num_items),
            global_bias=0.0,
        )
    context = ContextSpec(enabled=config.context_enabled)
    in_dim = 2 * k + context.width
    layers = []
    for out_dim in list(config.hidden_layers) + [1]:
        out_dim = int(out_dim)
        layers.append(
            MlpLayer(
                weights=glorot_uniform(rng, in_dim, out_dim),
                bias=np.zeros(out_dim),
                activation="identity" if out_dim == 1 and len(layers) == len(config.hidden_layers) else "relu",
            )
        )
        in_dim = out_dim
    return DainModel(user_table=user_table, item_table=item_table, layers=layers, context=context)

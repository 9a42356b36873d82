"""Shared test fixtures: independent oracles and small data builders.

Everything in here deliberately avoids the package's own fast paths --
oracles are plain loops and textbook formulas so that agreement with
the implementation actually means something.
"""

import math

import numpy as np

from dain.data import Dataset
from dain.numerics import SeededRng


# ---------------------------------------------------------------- oracles

def naive_matvec(m, v):
    rows, cols = m.shape
    out = np.zeros(rows)
    for r in range(rows):
        acc = 0.0
        for c in range(cols):
            acc += m[r, c] * v[c]
        out[r] = acc
    return out


def brute_hit_rate(ranked, relevant, k):
    for pos in range(min(k, len(ranked))):
        if ranked[pos] in relevant:
            return 1.0
    return 0.0


def brute_ndcg(ranked, relevant, k):
    dcg = 0.0
    for pos in range(min(k, len(ranked))):
        if ranked[pos] in relevant:
            dcg += 1.0 / math.log2(pos + 2)
    idcg = 0.0
    for pos in range(min(k, len(relevant))):
        idcg += 1.0 / math.log2(pos + 2)
    return dcg / idcg


def random_metric_instance(rng, pool=50):
    """Random (ranked list, relevance set, k) with relevant items both
    inside and outside the ranking."""
    n = 5 + rng.randrange(25)
    ranked = [int(x) for x in rng.sample_without_replacement(np.arange(pool), n)]
    rel_size = 1 + rng.randrange(4)
    relevant = set()
    while len(relevant) < rel_size:
        if rng.random() < 0.7 and n:
            relevant.add(ranked[rng.randrange(n)])
        else:
            relevant.add(pool + rng.randrange(10))
    k = 1 + rng.randrange(15)
    return ranked, relevant, k


def brute_average_precision(ranked, relevant, k):
    hits = 0
    total = 0.0
    for pos in range(min(k, len(ranked))):
        if ranked[pos] in relevant:
            hits += 1
            total += hits / (pos + 1)
    return total / min(len(relevant), k)


def reference_adam(grad_fn, x0, lr, beta1, beta2, eps, steps):
    """Textbook Adam on a scalar-parameter vector; written without any
    code shared with the training module."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trajectory = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
        trajectory.append(x.copy())
    return trajectory


# ----------------------------------------------------------- data builders

def make_dataset(rows, num_users=None, num_items=None, rating_min=1.0, rating_max=5.0):
    """Dataset from (u, i, y, ts) tuples; hour/weekday derived from ts."""
    users = np.array([r[0] for r in rows], dtype=np.int64)
    items = np.array([r[1] for r in rows], dtype=np.int64)
    ratings = np.array([r[2] for r in rows], dtype=np.float64)
    ts = np.array([r[3] for r in rows], dtype=np.int64)
    return Dataset(
        users=users,
        items=items,
        ratings=ratings,
        timestamps=ts,
        hours=(ts // 3600) % 24,
        weekdays=(ts // 86400 + 3) % 7,
        num_users=num_users if num_users is not None else int(users.max()) + 1,
        num_items=num_items if num_items is not None else int(items.max()) + 1,
        rating_min=rating_min,
        rating_max=rating_max,
    )


def random_interactions(rng, num_users, num_items, per_user):
    """(u, i, y, ts) rows: per_user distinct items for every user."""
    all_items = np.arange(num_items)
    rows = []
    for u in range(num_users):
        for i in rng.sample_without_replacement(all_items, per_user):
            rows.append((u, int(i), rng.random(), rng.randrange(10**9)))
    return rows


def gaussian(rng, n):
    """Box-Muller normals from the package's own uniform stream."""
    u1 = np.maximum(rng.random_array(n), 1e-300)
    u2 = rng.random_array(n)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def synth_context_data(seed, num_users=200, num_items=100, rank=4, per_user=30,
                       held_per_user=5, shift=0.2, noise=0.05):
    """Rank-`rank` ground truth plus an hour-parity rating shift.

    Returns (train, heldout) Datasets over the same id space. The
    generating process is the oracle for convergence tests: a model fed
    the hour one-hot can explain the shift, a context-free one cannot.
    """
    rng = SeededRng(seed, 50)
    gt_user = rng.random_array(num_users * rank).reshape(num_users, rank)
    gt_item = rng.random_array(num_items * rank).reshape(num_items, rank)
    users, items, stamps = [], [], []
    all_items = np.arange(num_items)
    for u in range(num_users):
        for i in rng.sample_without_replacement(all_items, per_user + held_per_user):
            users.append(u)
            items.append(int(i))
            stamps.append(rng.randrange(1_000_000_000))
    users = np.array(users, dtype=np.int64)
    items = np.array(items, dtype=np.int64)
    stamps = np.array(stamps, dtype=np.int64)
    hours = (stamps // 3600) % 24
    weekdays = (stamps // 86400 + 3) % 7
    base = 0.25 + 0.5 * np.einsum("ij,ij->i", gt_user[users], gt_item[items]) / rank
    parity_shift = np.where(hours % 2 == 0, shift, -shift)
    y = np.clip(base + parity_shift + noise * gaussian(rng, users.shape[0]), 0.0, 1.0)

    heldout_mask = np.zeros(users.shape[0], dtype=bool)
    for u in range(num_users):
        lo = u * (per_user + held_per_user)
        heldout_mask[lo + per_user : lo + per_user + held_per_user] = True

    def subset(mask):
        return Dataset(
            users=users[mask], items=items[mask], ratings=y[mask], timestamps=stamps[mask],
            hours=hours[mask], weekdays=weekdays[mask], num_users=num_users,
            num_items=num_items, rating_min=0.0, rating_max=1.0,
        )

    return subset(~heldout_mask), subset(heldout_mask)


def dataset_mse(model, ds):
    if getattr(model, "uses_context", False):
        pred = model.forward_batch(ds.users, ds.items, ds.hours, ds.weekdays).y_hat
    else:
        out = model.forward_batch(ds.users, ds.items)
        pred = out.y_hat if hasattr(out, "y_hat") else out
    d = pred - ds.ratings
    return float(np.mean(d * d))


# ------------------------------------------------- ranking experiment rig

def sample_user_slice(log, n_users, seed):
    """Uniformly sample n_users raw user ids and keep only their records."""
    from dain.data import InteractionLog

    unique_users = []
    seen = set()
    for rec in log.records:
        if rec.user not in seen:
            seen.add(rec.user)
            unique_users.append(rec.user)
    idx = SeededRng(seed).sample_without_replacement(np.arange(len(unique_users)), n_users)
    picked = {unique_users[int(j)] for j in idx}
    return InteractionLog([r for r in log.records if r.user in picked])


def directional_ranking_experiment(ds, seeds, epochs, negatives=99, k=10):
    """Train the four comparison scorers and evaluate each seed's split.

    Returns ({model: mean HR@k}, {model: mean NDCG@k}) with models keyed
    'dain' (context on), 'ncf' (same network, context off), 'mf', 'pop'.
    """
    from dain.data import leave_one_out_split
    from dain.evaluation import evaluate
    from dain.model import ModelConfig, PopularityModel, init_model
    from dain.numerics import STREAM_INIT, STREAM_SPLIT
    from dain.training import TrainConfig, fit

    hr = {name: 0.0 for name in ("dain", "ncf", "mf", "pop")}
    ndcg = dict(hr)
    for seed in seeds:
        split = leave_one_out_split(ds, negatives, SeededRng(seed, STREAM_SPLIT))
        models = {"pop": PopularityModel.from_dataset(split.train)}
        for name, kind, ctx_on in (("dain", "dain", True), ("ncf", "dain", False), ("mf", "mf", False)):
            model = init_model(
                ModelConfig(kind=kind, context_enabled=ctx_on),
                ds.num_users, ds.num_items, SeededRng(seed, STREAM_INIT),
            )
            fit(model, split.train, TrainConfig(epochs=epochs, seed=seed))
            models[name] = model
        for name, model in models.items():
            rep = evaluate(model, split, k)
            hr[name] += rep.hr_at_k / len(seeds)
            ndcg[name] += rep.ndcg_at_k / len(seeds)
    return hr, ndcg


# ------------------------------------------------------------ toy scorers

class RandomScorer:
    """Uniform-random predictions from a private seeded stream."""

    uses_context = False

    def __init__(self, num_users, num_items, seed):
        self.num_users = num_users
        self.num_items = num_items
        self._rng = SeededRng(seed, 77)

    def predict_batch(self, u, items, ctx=None):
        return self._rng.random_array(len(list(items)))


class FixedScorer:
    """Scores read from a (num_users, num_items) matrix."""

    uses_context = False

    def __init__(self, score_matrix):
        self._scores = np.asarray(score_matrix, dtype=np.float64)

    @property
    def num_users(self):
        return self._scores.shape[0]

    @property
    def num_items(self):
        return self._scores.shape[1]

    def predict_batch(self, u, items, ctx=None):
        return self._scores[u, np.asarray(list(items), dtype=np.int64)]


# ------------------------------------------------------------ file writers

def write_movielens(path, rows):
    """rows: (user, item, rating, ts) with raw string-able ids."""
    with open(path, "w") as f:
        for u, i, r, ts in rows:
            f.write(f"{u}::{i}::{r}::{ts}\n")


def write_tsv_file(path, rows, header=False):
    with open(path, "w") as f:
        if header:
            f.write("user\titem\trating\ttimestamp\n")
        for u, i, r, ts in rows:
            f.write(f"{u}\t{i}\t{r}\t{ts}\n")

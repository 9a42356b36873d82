"""Interaction-log ingestion and split construction.

Two input grammars are supported:

* ``movielens``: ``UserID::MovieID::Rating::Timestamp`` per line, ASCII;
* ``tsv``: ``user<TAB>item<TAB>rating<TAB>timestamp``, UTF-8, optional
  header row.

Raw string ids become dense indices in first-appearance order. Ratings
are min-max normalized over the whole log so targets land in [0, 1],
matching the sigmoid output of the models. Hour-of-day and day-of-week
are derived from the timestamp in UTC by plain integer arithmetic
(epoch day zero was a Thursday), never through the host's locale or
timezone machinery.
"""

from dataclasses import dataclass
from typing import BinaryIO, NamedTuple

import numpy as np

from .numerics import SeededRng


class DataError(Exception):
    """Unreadable, malformed, or inconsistent input data."""


class LogRecord(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int


@dataclass
class InteractionLog:
    records: list

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class Dataset:
    """Index-mapped interactions as parallel arrays.

    ``ratings`` holds the normalized target in [0, 1]; ``rating_min`` /
    ``rating_max`` remember the raw scale it came from.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    hours: np.ndarray
    weekdays: np.ndarray
    num_users: int
    num_items: int
    rating_min: float
    rating_max: float

    def __len__(self) -> int:
        return self.users.shape[0]

    def subset(self, mask: np.ndarray) -> "Dataset":
        """Row subset in original order; id space and scale unchanged."""
        return Dataset(
            users=self.users[mask],
            items=self.items[mask],
            ratings=self.ratings[mask],
            timestamps=self.timestamps[mask],
            hours=self.hours[mask],
            weekdays=self.weekdays[mask],
            num_users=self.num_users,
            num_items=self.num_items,
            rating_min=self.rating_min,
            rating_max=self.rating_max,
        )


@dataclass
class DatasetStats:
    users: int
    items: int
    interactions: int
    sparsity: float  # percent: 100 * interactions / (users * items)

    def line(self) -> str:
        return (
            f"users={self.users} items={self.items} "
            f"interactions={self.interactions} sparsity={self.sparsity:.2f}%"
        )


class EvalCase(NamedTuple):
    user: int
    item: int
    hour: int
    weekday: int
    negatives: np.ndarray


@dataclass
class EvalSplit:
    train: Dataset
    test: list
    skipped_users: int


class IdMap:
    """Bijection between raw string ids and dense indices,
    assigned in first-appearance order."""

    def __init__(self):
        self._to_index = {}
        self._to_raw = []

    def add(self, raw: str) -> int:
        idx = self._to_index.get(raw)
        if idx is None:
            idx = len(self._to_raw)
            self._to_index[raw] = idx
            self._to_raw.append(raw)
        return idx

    def index(self, raw: str) -> int:
        try:
            return self._to_index[raw]
        except KeyError:
            raise KeyError(f"unknown raw id {raw!r}") from None

    def raw(self, idx: int) -> str:
        return self._to_raw[idx]

    def __len__(self) -> int:
        return len(self._to_raw)

    def __contains__(self, raw: str) -> bool:
        return raw in self._to_index

    def __eq__(self, other) -> bool:
        return isinstance(other, IdMap) and self._to_raw == other._to_raw

    @property
    def raw_ids(self) -> list:
        return list(self._to_raw)

    @classmethod
    def from_raw_ids(cls, raw_ids) -> "IdMap":
        m = cls()
        for r in raw_ids:
            m.add(r)
        return m


def _parse_record(parts, line_no: int) -> LogRecord:
    user, item, rating_text, ts_text = parts
    try:
        rating = float(rating_text)
    except ValueError:
        raise DataError(f"line {line_no}: bad rating {rating_text!r}") from None
    if not np.isfinite(rating):
        raise DataError(f"line {line_no}: non-finite rating {rating_text!r}")
    try:
        ts = int(ts_text)
    except ValueError:
        raise DataError(f"line {line_no}: bad timestamp {ts_text!r}") from None
    if ts < 0:
        raise DataError(f"line {line_no}: negative timestamp {ts}")
    return LogRecord(user, item, rating, ts)


def parse_movielens(source: BinaryIO) -> InteractionLog:
    """Parse ``user::item::rating::timestamp`` lines, in file order."""
    records = []
    for line_no, raw_line in enumerate(source, start=1):
        line = raw_line.decode("ascii", errors="strict").strip()
        if not line:
            continue
        parts = line.split("::")
        if len(parts) != 4:
            raise DataError(f"line {line_no}: expected 4 '::'-separated fields, got {len(parts)}")
        records.append(_parse_record(parts, line_no))
    if not records:
        raise DataError("empty interaction log")
    return InteractionLog(records)


def parse_tsv(source: BinaryIO, has_header: bool = False) -> InteractionLog:
    """Parse tab-separated ``user item rating timestamp`` rows."""
    records = []
    for line_no, raw_line in enumerate(source, start=1):
        line = raw_line.decode("utf-8", errors="strict").rstrip("\r\n")
        if line_no == 1 and has_header:
            continue
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"line {line_no}: expected 4 tab-separated columns, got {len(parts)}")
        records.append(_parse_record(parts, line_no))
    if not records:
        raise DataError("empty interaction log")
    return InteractionLog(records)


def write_tsv(log: InteractionLog, sink, header: bool = False) -> None:
    """Inverse of :func:`parse_tsv` (modulo float formatting of ratings)."""
    if header:
        sink.write(b"user\titem\trating\ttimestamp\n")
    for rec in log.records:
        sink.write(f"{rec.user}\t{rec.item}\t{rec.rating!r}\t{rec.timestamp}\n".encode("utf-8"))


def context_from_timestamp(ts: int) -> tuple:
    """(hour 0..23, weekday 0..6 with Monday=0) of a unix time, UTC."""
    if ts < 0:
        raise ValueError(f"timestamp must be >= 0, got {ts}")
    hour = (ts // 3600) % 24
    # 1970-01-01 was a Thursday; Monday=0 makes that day 3.
    weekday = (ts // 86400 + 3) % 7
    return int(hour), int(weekday)


def build_dataset(log: InteractionLog):
    """(Dataset, user IdMap, item IdMap) from a raw log.

    Duplicate (user, item) pairs collapse to the record with the latest
    timestamp, ties going to the later file position. Normalization
    bounds come from the whole log, duplicates included; a constant
    rating column maps to all-ones.
    """
    if len(log) == 0:
        raise DataError("empty interaction log")
    user_map, item_map = IdMap(), IdMap()
    kept = {}  # (u, i) -> row position of the winning record
    rows = []  # (u, i, rating, ts) per record, in file order
    for pos, rec in enumerate(log.records):
        u = user_map.add(rec.user)
        i = item_map.add(rec.item)
        rows.append((u, i, rec.rating, rec.timestamp))
        prev = kept.get((u, i))
        if prev is None or rec.timestamp >= rows[prev][3]:
            kept[(u, i)] = pos
    r_min = min(r.rating for r in log.records)
    r_max = max(r.rating for r in log.records)
    keep_positions = sorted(kept.values())
    u_arr = np.array([rows[p][0] for p in keep_positions], dtype=np.int64)
    i_arr = np.array([rows[p][1] for p in keep_positions], dtype=np.int64)
    raw_ratings = np.array([rows[p][2] for p in keep_positions], dtype=np.float64)
    ts_arr = np.array([rows[p][3] for p in keep_positions], dtype=np.int64)
    if r_max > r_min:
        y = (raw_ratings - r_min) / (r_max - r_min)
    else:
        y = np.ones_like(raw_ratings)
    hours = (ts_arr // 3600) % 24
    weekdays = (ts_arr // 86400 + 3) % 7
    ds = Dataset(
        users=u_arr,
        items=i_arr,
        ratings=y,
        timestamps=ts_arr,
        hours=hours,
        weekdays=weekdays,
        num_users=len(user_map),
        num_items=len(item_map),
        rating_min=float(r_min),
        rating_max=float(r_max),
    )
    return ds, user_map, item_map


def stats(ds: Dataset) -> DatasetStats:
    return DatasetStats(
        users=ds.num_users,
        items=ds.num_items,
        interactions=len(ds),
        sparsity=sparsity_percent(ds.num_users, ds.num_items, len(ds)),
    )


def sparsity_percent(users: int, items: int, interactions: int) -> float:
    """Fill rate of the interaction matrix, in percent."""
    return 100.0 * interactions / (users * items)


def leave_one_out_split(ds: Dataset, negatives_per_user: int, rng: SeededRng) -> EvalSplit:
    """Hold out each user's latest interaction for ranking evaluation.

    Per user with at least two interactions, the latest-timestamp row
    (timestamp ties resolved toward the larger item index) becomes the
    test positive; the rest stay in train. Negatives are sampled
    uniformly without replacement from the items the user never touched.
    Users with a single interaction, or too few candidate negatives,
    contribute everything to train and are counted as skipped (singletons
    are not counted; they are simply absent from test by rule).
    """
    if negatives_per_user < 1:
        raise ValueError("negatives_per_user must be >= 1")
    n = len(ds)
    user_rows = [[] for _ in range(ds.num_users)]
    for row in range(n):
        user_rows[int(ds.users[row])].append(row)
    train_mask = np.ones(n, dtype=bool)
    test = []
    skipped = 0
    all_items = np.arange(ds.num_items, dtype=np.int64)
    for u in range(ds.num_users):
        rows = user_rows[u]
        if len(rows) < 2:
            continue
        best = rows[0]
        for row in rows[1:]:
            if (ds.timestamps[row], ds.items[row]) > (ds.timestamps[best], ds.items[best]):
                best = row
        seen = np.zeros(ds.num_items, dtype=bool)
        seen[ds.items[rows]] = True
        candidates = all_items[~seen]
        if candidates.shape[0] < negatives_per_user:
            skipped += 1
            continue
        negatives = rng.sample_without_replacement(candidates, negatives_per_user)
        test.append(
            EvalCase(
                user=u,
                item=int(ds.items[best]),
                hour=int(ds.hours[best]),
                weekday=int(ds.weekdays[best]),
                negatives=negatives,
            )
        )
        train_mask[best] = False
    return EvalSplit(train=ds.subset(train_mask), test=test, skipped_users=skipped)

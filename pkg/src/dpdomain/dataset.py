"""Datasets of per-user item sets.

A dataset is an immutable collection of users, each holding a finite set of
items. Items are UTF-8 strings externally and are interned to dense integer
ids (in first-appearance order) internally; the string table is part of the
dataset. Construction computes the frequency table once, so all downstream
statistics and mechanisms work on cached integer counts.

This module also provides ingestion from "user_id,item_id" CSV lines,
synthetic power-law (Zipfian) generation with verification, per-user
subsampling without replacement, summary statistics, and the two worst-case
instance constructors used by the lower-bound experiments.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .seeding import substream

logger = logging.getLogger(__name__)

# Substream tags (first path element after the caller's seed).
_TAG_GEN_ZIPF = 1
_TAG_SUBSAMPLE = 2


class IngestError(ValueError):
    """A malformed input line; the message carries the 1-based line number."""


class EmptyDatasetError(ValueError):
    """Raised when an operation requires at least one row or user."""


class ZipfFeasibilityError(ValueError):
    """Raised when a requested Zipf target cannot be realized; names the rank."""

    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


@dataclass(frozen=True)
class ZipfParams:
    """Power-law parameters: relative rank-r frequency is bounded by C / r**s."""

    C: float
    s: float

    def __post_init__(self):
        if self.C < 1:
            raise ValueError(f"C must be >= 1, got {self.C}")
        if self.s < 0:
            raise ValueError(f"s must be >= 0, got {self.s}")


@dataclass(frozen=True)
class ZipfCheckResult:
    """Outcome of a Zipf bound check; falsy when some rank violates the bound."""

    ok: bool
    violating_rank: int | None = None

    def __bool__(self) -> bool:
        return self.ok


class Dataset:
    """Immutable collection of per-user item sets with cached statistics.

    Attributes:
      user_labels: external user ids, in first-appearance order.
      users: per-user frozensets of interned item ids, parallel to user_labels.
      item_labels: string table mapping interned id -> item label. The table
        may contain items with zero remaining holders (e.g. after subsampling);
        those are excluded from the frequency table and the union.
      n: number of users.
      total_items: N, the sum of user set sizes.
      unique_items: M, the number of distinct items actually held.
      counts: int64 array of holder counts indexed by interned id.
      ranked: holder counts of present items, sorted in decreasing order.
      max_user_set_size: largest user set size (0 for an empty dataset).
    """

    __slots__ = (
        "user_labels",
        "users",
        "item_labels",
        "n",
        "total_items",
        "unique_items",
        "counts",
        "ranked",
        "set_sizes",
        "max_user_set_size",
        "_flat_users",
        "_flat_items",
        "_id_by_label",
        "_freq_by_label",
    )

    def __init__(
        self,
        user_labels: Sequence[str],
        users: Sequence[frozenset[int]],
        item_labels: Sequence[str],
    ):
        if len(user_labels) != len(users):
            raise ValueError("user_labels and users must have the same length")
        self.user_labels: tuple[str, ...] = tuple(user_labels)
        self.users: tuple[frozenset[int], ...] = tuple(
            w if isinstance(w, frozenset) else frozenset(w) for w in users
        )
        self.item_labels: tuple[str, ...] = tuple(item_labels)

        self.n: int = len(self.users)
        sizes = np.fromiter((len(w) for w in self.users), dtype=np.int64, count=self.n)
        sizes.setflags(write=False)
        self.set_sizes: np.ndarray = sizes
        self.total_items: int = int(sizes.sum()) if self.n else 0
        self.max_user_set_size: int = int(sizes.max()) if self.n else 0

        self._flat_users: np.ndarray = np.repeat(np.arange(self.n, dtype=np.int64), sizes)
        self._flat_items: np.ndarray = np.fromiter(
            (i for w in self.users for i in w), dtype=np.int64, count=self.total_items
        )
        if self.total_items and (
            self._flat_items.min() < 0 or self._flat_items.max() >= len(self.item_labels)
        ):
            raise ValueError("user sets refer to item ids outside the string table")

        self.counts: np.ndarray = np.bincount(
            self._flat_items, minlength=len(self.item_labels)
        ).astype(np.int64)
        present = self.counts[self.counts > 0]
        self.unique_items: int = int(present.size)
        self.ranked: np.ndarray = np.sort(present)[::-1]

        self._id_by_label: dict[str, int] | None = None
        self._freq_by_label: dict[str, int] | None = None

    # -- lookups -------------------------------------------------------------

    def id_of(self, label: str) -> int:
        """Interned id of a label; raises KeyError for unknown labels."""
        if self._id_by_label is None:
            self._id_by_label = {lab: i for i, lab in enumerate(self.item_labels)}
        return self._id_by_label[label]

    def label_of(self, item_id: int) -> str:
        return self.item_labels[item_id]

    def frequency(self, label: str) -> int:
        """Holder count of a label; 0 if unknown or no longer held."""
        if self._id_by_label is None:
            self._id_by_label = {lab: i for i, lab in enumerate(self.item_labels)}
        item_id = self._id_by_label.get(label)
        return int(self.counts[item_id]) if item_id is not None else 0

    @property
    def freq(self) -> dict[str, int]:
        """Frequency table as a label -> count map over present items only."""
        if self._freq_by_label is None:
            self._freq_by_label = {
                self.item_labels[i]: int(c) for i, c in enumerate(self.counts) if c > 0
            }
        return self._freq_by_label

    def union_ids(self) -> np.ndarray:
        """Interned ids of present items, in ascending id order."""
        return np.nonzero(self.counts)[0]

    def union_labels(self) -> frozenset[str]:
        return frozenset(self.item_labels[i] for i in self.union_ids())

    def ids_for(self, labels: Iterable[str], require_known: bool = False) -> set[int]:
        """Maps labels to present-item ids; unknown labels are dropped or rejected."""
        if self._id_by_label is None:
            self._id_by_label = {lab: i for i, lab in enumerate(self.item_labels)}
        ids: set[int] = set()
        for lab in labels:
            i = self._id_by_label.get(lab)
            if i is None or self.counts[i] == 0:
                if require_known:
                    raise ValueError(f"item {lab!r} is not present in the dataset")
                continue
            ids.add(i)
        return ids

    def flat_entries(self) -> tuple[np.ndarray, np.ndarray]:
        """(user_index, item_id) arrays with one entry per (user, item) pair."""
        return self._flat_users, self._flat_items

    # -- emission and equality ------------------------------------------------

    def to_pairs(self) -> Iterator[tuple[str, str]]:
        """Yields (user_label, item_label) rows, users in order, items by id."""
        for label, w in zip(self.user_labels, self.users):
            for item_id in sorted(w):
                yield label, self.item_labels[item_id]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.user_labels != other.user_labels:
            return False
        for w_self, w_other in zip(self.users, other.users):
            labels_self = {self.item_labels[i] for i in w_self}
            labels_other = {other.item_labels[i] for i in w_other}
            if labels_self != labels_other:
                return False
        return True

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"Dataset(n={self.n}, total_items={self.total_items}, "
            f"unique_items={self.unique_items})"
        )

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_user_items(
        cls,
        user_items: Sequence[Sequence[str]],
        user_labels: Sequence[str] | None = None,
    ) -> "Dataset":
        """Builds a dataset from per-user item label sequences.

        Item ids are interned in first-appearance order (scanning users in
        order, items in the given per-user order); duplicate items within a
        user are collapsed.
        """
        if user_labels is None:
            user_labels = [f"u{i + 1}" for i in range(len(user_items))]
        table: dict[str, int] = {}
        users: list[frozenset[int]] = []
        for items in user_items:
            ids: set[int] = set()
            for lab in items:
                item_id = table.get(lab)
                if item_id is None:
                    item_id = len(table)
                    table[lab] = item_id
                ids.add(item_id)
            users.append(frozenset(ids))
        return cls(user_labels, users, list(table.keys()))


def ingest_pairs(lines: Iterable[str], header: bool = False) -> Dataset:
    """Builds a dataset from "user_id,item_id" CSV lines.

    Rows are grouped by user id; duplicate (user, item) pairs are collapsed
    (set semantics) and the number of collapsed rows is logged. Users and
    items are both interned in first-appearance order.

    Args:
      lines: iterable of text lines (an open file works).
      header: when True the first line is a header and is skipped.

    Raises:
      IngestError: a line does not have exactly two non-empty fields.
      EmptyDatasetError: no data rows were found.
    """
    user_table: dict[str, int] = {}
    item_table: dict[str, int] = {}
    users: list[set[int]] = []
    rows = 0
    kept = 0
    for lineno, raw in enumerate(lines, start=1):
        if header and lineno == 1:
            continue
        line = raw.rstrip("\r\n")
        parts = line.split(",")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise IngestError(
                f"line {lineno}: expected 'user_id,item_id', got {line!r}"
            )
        rows += 1
        user_lab, item_lab = parts
        user_id = user_table.get(user_lab)
        if user_id is None:
            user_id = len(user_table)
            user_table[user_lab] = user_id
            users.append(set())
        item_id = item_table.get(item_lab)
        if item_id is None:
            item_id = len(item_table)
            item_table[item_lab] = item_id
        if item_id not in users[user_id]:
            users[user_id].add(item_id)
            kept += 1
    if rows == 0:
        raise EmptyDatasetError("no data rows in input")
    if rows != kept:
        logger.info("ingest collapsed %d duplicate (user,item) rows", rows - kept)
    return Dataset(
        list(user_table.keys()),
        [frozenset(w) for w in users],
        list(item_table.keys()),
    )


def zipf_check(d: Dataset, params: ZipfParams) -> ZipfCheckResult:
    """Checks the per-rank bound N_(r) / N <= C / r**s for all ranks.

    The comparison is done as N_(r) * r**s <= C * N with relative tolerance
    1e-12, so exact equality at the boundary counts as satisfying the bound.
    Returns the first violating rank when the check fails.
    """
    if d.n == 0 or d.total_items == 0:
        raise EmptyDatasetError("zipf_check requires a non-empty dataset")
    ranks = np.arange(1, d.unique_items + 1, dtype=np.float64)
    lhs = d.ranked.astype(np.float64) * ranks**params.s
    bound = params.C * d.total_items
    bad = np.nonzero(lhs > bound * (1.0 + 1e-12))[0]
    if bad.size:
        return ZipfCheckResult(False, int(bad[0]) + 1)
    return ZipfCheckResult(True, None)


def gen_zipf(params: ZipfParams, n_items: int, n: int, seed: int) -> Dataset:
    """Generates a synthetic dataset whose rank frequencies follow a power law.

    The item at rank r is assigned to max(1, round(n * C' * r**-s)) distinct
    users chosen uniformly at random, where C' = min(C, 1) so the top rank
    never exceeds the user count. The result is verified with `zipf_check`
    and generation fails rather than return a dataset violating the bound
    (this happens when n_items is too large for the realized total mass:
    the tail needs n_items**s <= C * N).

    Users keep their sets as assigned; a user may hold many items, or none.
    Generation is a pure function of (params, n_items, n, seed).
    """
    if n_items < 1:
        raise ValueError(f"n_items must be >= 1, got {n_items}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if params.s <= 0:
        raise ValueError(f"generation requires s > 0, got {params.s}")

    c_eff = min(params.C, 1.0)
    freqs = [
        max(1, int(round(n * c_eff * float(r) ** -params.s)))
        for r in range(1, n_items + 1)
    ]
    for r, f in enumerate(freqs, start=1):
        if f > n:
            raise ZipfFeasibilityError(
                f"rank {r} requires {f} distinct holders but only {n} users exist",
                rank=r,
            )

    rng = substream(seed, _TAG_GEN_ZIPF)
    users: list[set[int]] = [set() for _ in range(n)]
    for r, f in enumerate(freqs, start=1):
        for u in rng.choice(n, size=f, replace=False):
            users[u].add(r - 1)
    d = Dataset(
        [f"u{i + 1}" for i in range(n)],
        [frozenset(w) for w in users],
        [f"item{r}" for r in range(1, n_items + 1)],
    )
    check = zipf_check(d, params)
    if not check:
        r = check.violating_rank
        raise ZipfFeasibilityError(
            f"generated dataset violates the (C={params.C}, s={params.s}) bound at "
            f"rank {r}; reduce n_items to at most (C*N)^(1/s) "
            f"~ {int((params.C * d.total_items) ** (1.0 / params.s))}",
            rank=r,
        )
    return d


def subsample(d: Dataset, delta0: int, seed: int) -> Dataset:
    """Keeps a uniform random subset of min(delta0, |W_i|) items per user.

    Sampling without replacement is a partial Fisher-Yates shuffle of the
    user's item list ordered by interned id, using an independent per-user
    RNG substream derived from (seed, user index). Users already within the
    bound keep their exact set; if no user exceeds the bound the input
    dataset object itself is returned.
    """
    if delta0 < 1:
        raise ValueError(f"delta0 must be >= 1, got {delta0}")
    if delta0 >= d.max_user_set_size:
        return d
    new_users: list[frozenset[int]] = []
    for i, w in enumerate(d.users):
        if len(w) <= delta0:
            new_users.append(w)
            continue
        items = sorted(w)
        rng = substream(seed, _TAG_SUBSAMPLE, i)
        m = len(items)
        for j in range(delta0):
            swap = j + int(rng.integers(0, m - j))
            items[j], items[swap] = items[swap], items[j]
        new_users.append(frozenset(items[:delta0]))
    return Dataset(d.user_labels, new_users, d.item_labels)


@dataclass(frozen=True)
class DatasetStats:
    """Plot-ready dataset summary.

    ecdf is the empirical CDF of user set sizes as (size, cumulative fraction)
    pairs; rank_freq is (rank, frequency) for ranks 1..M in decreasing
    frequency order.
    """

    n_users: int
    n_items: int
    n_entries: int
    max_user_set_size: int
    ecdf: list[tuple[int, float]]
    rank_freq: list[tuple[int, int]]

    def to_json_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_entries": self.n_entries,
            "max_user_set_size": self.max_user_set_size,
            "ecdf": [[s, f] for s, f in self.ecdf],
            "rank_freq": [[r, f] for r, f in self.rank_freq],
        }

    def rank_freq_csv(self) -> str:
        lines = ["rank,frequency"]
        lines += [f"{r},{f}" for r, f in self.rank_freq]
        return "\n".join(lines) + "\n"

    def ecdf_csv(self) -> str:
        lines = ["set_size,cum_fraction"]
        lines += [f"{s},{format(f, '.9g')}" for s, f in self.ecdf]
        return "\n".join(lines) + "\n"


def dataset_stats(d: Dataset) -> DatasetStats:
    """Summary counts plus the ECDF of set sizes and the rank/frequency table."""
    if d.n == 0:
        return DatasetStats(0, 0, 0, 0, [], [])
    uniq, cnt = np.unique(d.set_sizes, return_counts=True)
    cum = np.cumsum(cnt) / d.n
    ecdf = [(int(s), float(c)) for s, c in zip(uniq, cum)]
    rank_freq = [(r + 1, int(f)) for r, f in enumerate(d.ranked)]
    return DatasetStats(
        n_users=d.n,
        n_items=d.unique_items,
        n_entries=d.total_items,
        max_user_set_size=d.max_user_set_size,
        ecdf=ecdf,
        rank_freq=rank_freq,
    )


def hard_instance_singleton(n: int) -> Dataset:
    """n users, each holding one globally unique item.

    On this dataset any sound private mechanism must leave essentially all
    mass unreleased, which makes it the canonical hardness witness.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Dataset(
        [f"u{i + 1}" for i in range(n)],
        [frozenset([i]) for i in range(n)],
        [f"x{i + 1}" for i in range(n)],
    )


def hard_instance_flat(k: int, b: int) -> Dataset:
    """k items, k*b users; item j is held by its own disjoint block of b users.

    Every frequency equals b and the best k-item hitting set covers all users.
    """
    if k < 1 or b < 1:
        raise ValueError(f"k and b must be >= 1, got k={k}, b={b}")
    users = [frozenset([i // b]) for i in range(k * b)]
    return Dataset(
        [f"u{i + 1}" for i in range(k * b)],
        users,
        [f"item{j + 1}" for j in range(k)],
    )


def zipf_max_set_size_bound(d: Dataset, params: ZipfParams) -> float:
    """Upper bound (C * N) ** (1/s) on any user's set size for Zipf datasets."""
    if params.s <= 0:
        return math.inf
    return (params.C * d.total_items) ** (1.0 / params.s)

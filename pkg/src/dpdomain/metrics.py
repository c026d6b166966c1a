"""Utility metrics for released item sets, plus exact small-instance oracles.

The missing-mass family measures how much item mass a released set leaves
behind; hit counting measures user coverage. All mass metrics accumulate
integer numerators and divide by the total count N exactly once, so values
are exact up to a single float division.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dataset import Dataset, EmptyDatasetError

METRIC_NAMES = frozenset(
    {"MM", "MM_p", "MM_topk", "L1_topk", "Hits", "MissedUsers", "Opt"}
)

# Exhaustive-search guard: refuse instances beyond this size.
_ORACLE_MAX_ITEMS = 22
_ORACLE_MAX_SUBSETS = 2_000_000


class UndefinedMetricError(ValueError):
    """The metric is undefined for this input (e.g. empty dataset)."""


class OracleCapacityError(ValueError):
    """The instance is too large for the exhaustive oracle."""


@dataclass(frozen=True)
class MetricReport:
    """One named metric evaluation with its parameters."""

    metric_name: str
    value: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric_name not in METRIC_NAMES:
            raise ValueError(f"unknown metric name {self.metric_name!r}")

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        params_json = json.dumps(self.params, sort_keys=True, separators=(",", ":"))
        writer.writerow([self.metric_name, params_json, format(self.value, ".9g")])
        return buf.getvalue()


def _require_mass(d: Dataset) -> None:
    if d.total_items == 0:
        raise UndefinedMetricError("missing mass is undefined for an empty dataset")


def mm(d: Dataset, s: Iterable[str]) -> float:
    """Missing mass: the fraction of all item occurrences not covered by s.

    Items in s that do not occur in the dataset contribute nothing.
    """
    _require_mass(d)
    covered = sum(int(d.counts[i]) for i in d.ids_for(s))
    return (d.total_items - covered) / d.total_items


def mm_p(d: Dataset, s: Iterable[str], p: float) -> float:
    """l_p norm of the vector of missing relative frequencies.

    p = 1 coincides exactly with `mm`; p = 0 counts the missing items; p = inf
    is the largest missing relative frequency.
    """
    _require_mass(d)
    if p < 0:
        raise ValueError(f"p must be in {{0}} or (0, inf], got {p}")
    present = d.ids_for(s)
    missing = [int(d.counts[i]) for i in d.union_ids() if int(i) not in present]
    if p == 0:
        return float(len(missing))
    if not missing:
        return 0.0
    n_total = d.total_items
    if p == 1:
        return sum(missing) / n_total
    if math.isinf(p):
        return max(missing) / n_total
    return sum((c / n_total) ** p for c in missing) ** (1.0 / p)


def _check_ordered_sequence(d: Dataset, s: Sequence[str], k: int) -> list[int]:
    """Validates an ordered released sequence for the top-k metrics."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(s) > k:
        raise ValueError(f"sequence length {len(s)} exceeds k={k}")
    if len(set(s)) != len(s):
        raise ValueError("sequence contains duplicate items")
    ids = []
    for lab in s:
        if d.frequency(lab) == 0:
            raise ValueError(f"item {lab!r} is not present in the dataset")
        ids.append(d.id_of(lab))
    return ids


def mm_topk(d: Dataset, s: Sequence[str], k: int) -> float:
    """Top-k missing mass of an ordered sequence of at most k distinct items.

    Equals (sum of the k largest frequencies - sum of the released items'
    frequencies) / N. Order does not matter here; it does for `l1_topk`.
    """
    _require_mass(d)
    _check_ordered_sequence(d, s, k)
    top = int(d.ranked[: min(k, d.unique_items)].sum())
    released = sum(d.frequency(lab) for lab in s)
    return (top - released) / d.total_items


def l1_topk(d: Dataset, s: Sequence[str], k: int) -> int:
    """Order-sensitive top-k l1 loss, in raw item counts.

    Position i of the output is compared against the i-th largest frequency;
    positions beyond the sequence length pay the full frequency they missed.
    """
    _require_mass(d)
    _check_ordered_sequence(d, s, k)
    ranked = d.ranked
    m = d.unique_items
    loss = 0
    for i, lab in enumerate(s):
        n_i = int(ranked[i]) if i < m else 0
        loss += abs(n_i - d.frequency(lab))
    for i in range(len(s), min(k, m)):
        loss += int(ranked[i])
    return loss


def hits(d: Dataset, s: Iterable[str]) -> int:
    """Number of users whose item set intersects s."""
    ids = frozenset(d.ids_for(s))
    if not ids:
        return 0
    return sum(1 for w in d.users if not ids.isdisjoint(w))


def missed_users(d: Dataset, s: Iterable[str]) -> int:
    """Number of users not hit by s; always n - hits(d, s)."""
    return d.n - hits(d, s)


def opt_bruteforce(d: Dataset, k: int) -> tuple[int, frozenset[str]]:
    """Exact maximum of hits over all item subsets of size at most k.

    Enumerates every subset of the union of size min(k, M); monotonicity of
    hits makes that sufficient. Ties are broken by lexicographic order of the
    interned-id tuples, so the witness is deterministic.

    Raises:
      OracleCapacityError: more than 22 distinct items, or too many subsets.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    m = d.unique_items
    if m == 0:
        return 0, frozenset()
    if m > _ORACLE_MAX_ITEMS:
        raise OracleCapacityError(
            f"instance has {m} items; the exhaustive oracle allows at most "
            f"{_ORACLE_MAX_ITEMS}"
        )
    kk = min(k, m)
    n_subsets = math.comb(m, kk)
    if n_subsets > _ORACLE_MAX_SUBSETS:
        raise OracleCapacityError(
            f"C({m},{kk}) = {n_subsets} subsets exceeds the oracle cap of "
            f"{_ORACLE_MAX_SUBSETS}"
        )
    union = [int(i) for i in d.union_ids()]
    user_mask = {i: 0 for i in union}
    for u, w in enumerate(d.users):
        bit = 1 << u
        for i in w:
            user_mask[i] |= bit
    best_hits = -1
    best_combo: tuple[int, ...] = ()
    for combo in itertools.combinations(union, kk):
        mask = 0
        for i in combo:
            mask |= user_mask[i]
        h = mask.bit_count()
        if h > best_hits:
            best_hits = h
            best_combo = combo
    return best_hits, frozenset(d.item_labels[i] for i in best_combo)


def greedy_hits(d: Dataset, domain: Iterable[str], k: int) -> tuple[str, ...]:
    """Deterministic greedy cover over the given domain.

    Each round picks the domain item hitting the most not-yet-hit users,
    breaking ties by smallest interned id, and removes the users it hits.
    Stops early when no item has positive marginal gain, every user is hit,
    or the domain is exhausted.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    domain_ids = set(d.ids_for(domain))
    surviving = [u for u in range(d.n) if d.users[u]]
    picked: list[str] = []
    while domain_ids and surviving and len(picked) < k:
        gain: dict[int, int] = {}
        for u in surviving:
            for i in d.users[u] & domain_ids:
                gain[i] = gain.get(i, 0) + 1
        if not gain:
            break
        best = min(gain, key=lambda i: (-gain[i], i))
        if gain[best] == 0:
            break
        picked.append(d.item_labels[best])
        domain_ids.discard(best)
        surviving = [u for u in surviving if best not in d.users[u]]
    return tuple(picked)

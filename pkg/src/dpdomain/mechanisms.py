"""The randomized release mechanisms.

Four mechanisms are provided:

  * `wgm` - weighted Gaussian set union: subsample each user to at most
    delta0 items, build a histogram where user i adds |W_i|^(-1/2) to each
    of their items (unit l2 contribution per user), add Gaussian noise, and
    release items whose noisy weighted count clears the threshold.
  * `peeling_topk` - known-domain top-k: add one Gumbel draw to each domain
    count and output the k largest noisy counts in decreasing order.
  * `user_peeling_hits` - known-domain k-hitting set: greedy coverage where
    each round picks the noisy-argmax item over the users not yet hit.
  * `meta` - domain discovery composition: run `wgm` on half the budget to
    obtain a domain, then run the requested known-domain mechanism on the
    other half restricted to that domain.

Every mechanism is a pure function of (inputs, seed): noise is drawn from
per-stage substreams in interned-id order, and ties are always broken by
smallest interned id, so outputs are reproducible regardless of scheduling.
By construction every output is a subset of the items actually present in
the input dataset.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .calibration import GumbelScale, PrivacyBudget, WgmConfig, calibrate_wgm, gumbel_scale
from .dataset import Dataset, subsample
from .seeding import child_seed, substream

# Substream tags; see seeding.py.
_TAG_WGM_SUBSAMPLE = 10
_TAG_WGM_NOISE = 11
_TAG_TOPK = 12
_TAG_PEEL = 13
_TAG_META_STAGE1 = 14
_TAG_META_STAGE2 = 15


class NoiseMode(enum.Enum):
    """Calibrated noise, or no noise at all (test-only, not private)."""

    CALIBRATED = "calibrated"
    DISABLED = "disabled"


class Task(enum.Enum):
    """Known-domain mechanism run by the second stage of `meta`."""

    TOP_K = "top-k"
    HITTING_SET = "hitting-set"


@dataclass(frozen=True)
class WgmTrace:
    """White-box execution record of one `wgm` run.

    weighted_counts and noisy_counts cover exactly the items present after
    subsampling; released is the subset of those at or above the threshold.
    p_star is the minimum per-item survival probability under subsampling
    and q_star = min(delta0, max user set size).
    """

    subsampled: Dataset
    kept_sizes: np.ndarray
    weighted_counts: dict[str, float]
    noisy_counts: dict[str, float]
    released: frozenset[str]
    p_star: float
    q_star: int


@dataclass(frozen=True)
class TopKOutput:
    """Ordered released sequence with the noisy scores that ranked it."""

    items: tuple[str, ...]
    noisy_scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class HittingSetOutput:
    """Released items in pick order, with users newly hit per round."""

    items: tuple[str, ...]
    users_hit_per_round: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)

    @property
    def total_hits(self) -> int:
        return sum(self.users_hit_per_round)


def sample_gumbel(rng: np.random.Generator, lam: float, size: int) -> np.ndarray:
    """Gumbel(lam) draws via the inverse CDF -lam * ln(-ln U).

    U is drawn from the open interval (0, 1) by mapping 53-bit integers in
    [1, 2^53 - 1], which keeps the transform branch-free and reproducible.
    """
    u = rng.integers(1, 1 << 53, size=size).astype(np.float64) / float(1 << 53)
    return -lam * np.log(-np.log(u))


def _require_scale(scale: GumbelScale | None, mode: NoiseMode) -> None:
    if mode is NoiseMode.CALIBRATED and scale is None:
        raise ValueError("calibrated mode requires a GumbelScale")


def wgm(
    d: Dataset, cfg: WgmConfig, mode: NoiseMode, seed: int
) -> tuple[frozenset[str], WgmTrace]:
    """Weighted Gaussian set union release.

    Returns the released item labels together with a full trace (subsampled
    dataset, weighted and noisy counts) for white-box verification. The
    released set is always a subset of the items present in d.
    """
    sub = subsample(d, cfg.delta0, child_seed(seed, _TAG_WGM_SUBSAMPLE))
    flat_users, flat_items = sub.flat_entries()
    sizes = sub.set_sizes.astype(np.float64)
    if sub.total_items:
        weights = 1.0 / np.sqrt(sizes[flat_users])
        hist = np.bincount(flat_items, weights=weights, minlength=len(sub.item_labels))
    else:
        hist = np.zeros(len(sub.item_labels))
    present = sub.union_ids()

    if mode is NoiseMode.CALIBRATED:
        rng = substream(seed, _TAG_WGM_NOISE)
        noise = rng.normal(0.0, cfg.sigma, size=present.size)
    else:
        noise = np.zeros(present.size)
    noisy = hist[present] + noise

    released_ids = present[noisy >= cfg.threshold]
    released = frozenset(d.item_labels[i] for i in released_ids)
    max_size = d.max_user_set_size
    trace = WgmTrace(
        subsampled=sub,
        kept_sizes=sub.set_sizes,
        weighted_counts={
            d.item_labels[i]: float(hist[i]) for i in present
        },
        noisy_counts={
            d.item_labels[i]: float(v) for i, v in zip(present, noisy)
        },
        released=released,
        p_star=min(1.0, cfg.delta0 / max_size) if max_size else 1.0,
        q_star=min(cfg.delta0, max_size),
    )
    return released, trace


def peeling_topk(
    d: Dataset,
    domain: Iterable[str],
    k: int,
    scale: GumbelScale | None,
    mode: NoiseMode,
    seed: int,
) -> TopKOutput:
    """Gumbel-noise top-k over a known domain.

    Adds one independent Gumbel(lam) draw to each domain item's count and
    returns the min(k, |domain|) largest noisy counts in decreasing order,
    ties by interned id. With noise disabled this is exactly the true top-k
    of the domain.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _require_scale(scale, mode)
    domain_ids = sorted(d.ids_for(domain, require_known=True))
    if not domain_ids:
        return TopKOutput((), ())
    counts = d.counts[domain_ids].astype(np.float64)
    if mode is NoiseMode.CALIBRATED:
        noise = sample_gumbel(substream(seed, _TAG_TOPK), scale.lam, len(domain_ids))
    else:
        noise = np.zeros(len(domain_ids))
    noisy = counts + noise
    order = sorted(range(len(domain_ids)), key=lambda j: (-noisy[j], domain_ids[j]))
    top = order[: min(k, len(domain_ids))]
    return TopKOutput(
        items=tuple(d.item_labels[domain_ids[j]] for j in top),
        noisy_scores=tuple(float(noisy[j]) for j in top),
    )


def user_peeling_hits(
    d: Dataset,
    domain: Iterable[str],
    k: int,
    scale: GumbelScale | None,
    mode: NoiseMode,
    seed: int,
) -> HittingSetOutput:
    """Gumbel-noise greedy coverage over a known domain.

    Runs up to k rounds. Each round draws fresh Gumbel(lam) noise on the
    marginal hit counts over users not yet hit, picks the noisy argmax (ties
    by interned id), removes the picked item from the domain and the users
    it hits from the pool. Stops early when the domain or the user pool is
    exhausted; with noise disabled it additionally stops when no item has
    positive marginal gain, matching the deterministic greedy cover.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _require_scale(scale, mode)
    domain_ids = sorted(d.ids_for(domain, require_known=True))
    surviving = [u for u in range(d.n) if d.users[u]]
    rng = substream(seed, _TAG_PEEL)
    picked: list[str] = []
    hit_counts: list[int] = []
    for _ in range(k):
        if not domain_ids or not surviving:
            break
        gain = dict.fromkeys(domain_ids, 0)
        for u in surviving:
            for i in d.users[u]:
                if i in gain:
                    gain[i] += 1
        if mode is NoiseMode.CALIBRATED:
            noise = sample_gumbel(rng, scale.lam, len(domain_ids))
            noisy = {i: gain[i] + z for i, z in zip(domain_ids, noise)}
        else:
            if max(gain.values()) == 0:
                break
            noisy = gain
        best = min(domain_ids, key=lambda i: (-noisy[i], i))
        picked.append(d.item_labels[best])
        hit_counts.append(gain[best])
        domain_ids.remove(best)
        surviving = [u for u in surviving if best not in d.users[u]]
    return HittingSetOutput(items=tuple(picked), users_hit_per_round=tuple(hit_counts))


def meta(
    d: Dataset,
    budget: PrivacyBudget,
    delta0: int,
    k: int,
    task: Task,
    seed: int,
    mode: NoiseMode = NoiseMode.CALIBRATED,
    cfg: WgmConfig | None = None,
    scale: GumbelScale | None = None,
) -> tuple[TopKOutput | HittingSetOutput, WgmTrace]:
    """Unknown-domain top-k / k-hitting set by domain discovery then selection.

    Stage 1 runs `wgm` calibrated at the first budget share to discover a
    domain; stage 2 runs the known-domain mechanism at the second share on
    that domain. The two stages use independent substreams of the seed. If
    stage 1 releases nothing, stage 2 returns an empty output.

    cfg and scale may be passed in when the caller has already calibrated
    them for this (budget, delta0, k); by default they are derived here.
    """
    if cfg is None:
        cfg = calibrate_wgm(*budget.stage(0), delta0)
    cfg = cfg.bound_to(d.max_user_set_size)
    released, trace = wgm(d, cfg, mode, child_seed(seed, _TAG_META_STAGE1))
    if scale is None:
        scale = gumbel_scale(*budget.stage(1), k)
    stage2_seed = child_seed(seed, _TAG_META_STAGE2)
    if task is Task.TOP_K:
        out: TopKOutput | HittingSetOutput = peeling_topk(
            d, released, k, scale, mode, stage2_seed
        )
    elif task is Task.HITTING_SET:
        out = user_peeling_hits(d, released, k, scale, mode, stage2_seed)
    else:
        raise ValueError(f"unknown task {task!r}")
    return out, trace

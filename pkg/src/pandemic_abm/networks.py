"""Sparse interaction layers: household cliques, occupation groups, random encounters.

Each layer is an edge list of undirected (src, dst) pairs with src < dst,
deduplicated within a layer per step.  Household edges are static; the
occupation and random layers are resampled every step.  Memory is always
O(edges), never O(N^2).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .popgen import Population

HOUSEHOLD = 0
OCCUPATION = 1
RANDOM = 2

LAYER_NAMES = ("household", "occupation", "random")


@dataclass
class EdgeList:
    """One day's interactions: parallel arrays of endpoints plus layer codes."""

    src: np.ndarray   # int32, src < dst per edge
    dst: np.ndarray   # int32
    layer: np.ndarray  # uint8
    step: int = 0

    def __len__(self) -> int:
        return len(self.src)


@dataclass(frozen=True)
class NetworkParams:
    """Layer degree targets (contacts per agent per day)."""

    occupation_mean_contacts: float = 0.25
    random_mean_contacts: float = 3.0
    scale_random_interact: float = 1.0


def empty_edges(step: int = 0) -> EdgeList:
    return EdgeList(
        src=np.empty(0, dtype=np.int32),
        dst=np.empty(0, dtype=np.int32),
        layer=np.empty(0, dtype=np.uint8),
        step=step,
    )


def _dedupe_pairs(src: np.ndarray, dst: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalize to src < dst, drop self-loops and duplicate pairs."""
    lo = np.minimum(src, dst).astype(np.int64)
    hi = np.maximum(src, dst).astype(np.int64)
    keep = lo != hi
    key = np.unique(lo[keep] * n + hi[keep])
    return (key // n).astype(np.int32), (key % n).astype(np.int32)


def build_household_edges(pop: "Population") -> EdgeList:
    """Complete graph within every household; static across the run."""
    order = np.argsort(pop.household_id, kind="stable")
    sizes = np.bincount(pop.household_id)
    src_parts: list[np.ndarray] = []
    dst_parts: list[np.ndarray] = []
    # Households are tiny (<= 6 members), so per-size clique templates keep
    # this O(edges) without a per-household Python loop.
    starts = np.concatenate(([0], np.cumsum(sizes)))
    for size in np.unique(sizes):
        if size < 2:
            continue
        hh_ids = np.flatnonzero(sizes == size)
        base = starts[hh_ids]  # offset of each household of this size
        iu, ju = np.triu_indices(size, k=1)
        s = (base[:, None] + iu[None, :]).ravel()
        d = (base[:, None] + ju[None, :]).ravel()
        src_parts.append(order[s])
        dst_parts.append(order[d])
    if not src_parts:
        return empty_edges()
    src = np.concatenate(src_parts).astype(np.int32)
    dst = np.concatenate(dst_parts).astype(np.int32)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    return EdgeList(
        src=lo, dst=hi, layer=np.full(len(lo), HOUSEHOLD, dtype=np.uint8), step=0
    )


def occupation_sort_order(pop: "Population") -> np.ndarray:
    """Static agent ordering grouped by occupation; compute once per run."""
    return np.argsort(pop.occupation, kind="stable").astype(np.int32)


def sample_occupation_edges(
    pop: "Population",
    params: NetworkParams,
    step: int,
    rng: np.random.Generator,
    eligible: np.ndarray | None = None,
    order: np.ndarray | None = None,
) -> EdgeList:
    """Resample the within-occupation contact graph for one step.

    Configuration-model style: every eligible agent draws
    Poisson(mean/2) partners uniformly from the eligible members of its
    own occupation group (each undirected edge contributes a degree at
    both endpoints, so half the mean per side yields a realized mean
    degree of ~`occupation_mean_contacts`).  Duplicates collapse; groups
    of size one produce no edges.
    """
    mean = params.occupation_mean_contacts
    if mean <= 0:
        return empty_edges(step)
    if order is None:
        order = occupation_sort_order(pop)
    if eligible is None:
        members = order
    else:
        members = order[eligible[order]]
    if len(members) == 0:
        return empty_edges(step)
    occ_members = pop.occupation[members]
    counts = np.bincount(occ_members, minlength=21)
    starts = np.concatenate(([0], np.cumsum(counts)))

    stubs = rng.poisson(mean / 2.0, len(members))
    stubs[counts[occ_members] < 2] = 0
    total = int(stubs.sum())
    if total == 0:
        return empty_edges(step)

    src = np.repeat(members, stubs)
    g = pop.occupation[src]
    offs = (rng.random(total) * counts[g]).astype(np.int64)
    dst = members[starts[g] + offs]
    s, d = _dedupe_pairs(src, dst, pop.n)
    return EdgeList(src=s, dst=d, layer=np.full(len(s), OCCUPATION, dtype=np.uint8), step=step)


def sample_random_edges(
    pop: "Population",
    params: NetworkParams,
    step: int,
    rng: np.random.Generator,
    eligible: np.ndarray | None = None,
) -> EdgeList:
    """Resample the daily random-encounter layer: uniform eligible pairs."""
    mean = params.random_mean_contacts * params.scale_random_interact
    if mean <= 0:
        return empty_edges(step)
    if eligible is None:
        eligible = np.ones(pop.n, dtype=bool)
    members = np.flatnonzero(eligible)
    if len(members) < 2:
        return empty_edges(step)
    count = rng.poisson(len(members) * mean / 2.0)
    if count == 0:
        return empty_edges(step)
    src = members[rng.integers(0, len(members), count)]
    dst = members[rng.integers(0, len(members), count)]
    s, d = _dedupe_pairs(src, dst, pop.n)
    return EdgeList(src=s, dst=d, layer=np.full(len(s), RANDOM, dtype=np.uint8), step=step)


def filter_edges(edges: EdgeList, eligible: np.ndarray) -> EdgeList:
    """Keep only edges whose endpoints are both eligible."""
    keep = eligible[edges.src] & eligible[edges.dst]
    return EdgeList(
        src=edges.src[keep], dst=edges.dst[keep], layer=edges.layer[keep], step=edges.step
    )


def merge_edge_lists(parts: Iterable[EdgeList], step: int) -> EdgeList:
    parts = list(parts)
    return EdgeList(
        src=np.concatenate([p.src for p in parts]),
        dst=np.concatenate([p.dst for p in parts]),
        layer=np.concatenate([p.layer for p in parts]),
        step=step,
    )


def write_edges_csv(edges: EdgeList, path) -> None:
    """Debug dump: one `step,layer,src,dst` row per edge."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "layer", "src", "dst"])
        for s, d, l in zip(edges.src.tolist(), edges.dst.tolist(), edges.layer.tolist()):
            writer.writerow([edges.step, LAYER_NAMES[l], s, d])

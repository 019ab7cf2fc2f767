"""Next-display selection: mass-balanced Voronoi seeds under expected similarity.

Showing the n highest-posterior items wastes a round whenever they are
near-duplicates: whichever one the user clicks, little is learned.  The
answer carries the most information when the displayed seeds split the
posterior mass evenly among their Voronoi cells, so seed selection greedily
maximizes the entropy of the cell masses.  Distances between items use the
channel-weighted expected similarity, since each item's channel weights
differ.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bayes import AuxiliaryState, Posteriors

# Greedy seed candidates are drawn from this many top-posterior items.
CANDIDATE_POOL = 64


class DisplayError(ValueError):
    """Display request that the active subset cannot satisfy."""


@dataclass(frozen=True)
class DisplaySet:
    """Ordered seed ids plus the posterior mass captured by each seed's cell."""

    seeds: tuple[int, ...]
    partition_mass: np.ndarray

    def __post_init__(self) -> None:
        if len(set(self.seeds)) != len(self.seeds):
            raise DisplayError("display seeds must be distinct")


def expected_similarity(provider, omega: np.ndarray, x: int, y: int) -> float:
    """Channel-mixture similarity of two items under their omega columns.

    s(x, y) = sum_j omega[j,x] omega[j,y] s_j(x,y) / sum_j omega[j,x] omega[j,y];
    a convex combination, so it stays between the per-channel min and max.
    """
    px, py = provider.position(x), provider.position(y)
    coef = omega[:, px] * omega[:, py]
    # the weights are scale-free; renormalizing dodges underflow when both
    # omega columns have collapsed onto different channels
    coef = coef / coef.max()
    sims = np.array(
        [provider.similarity(j, x, y) for j in range(provider.n_channels)]
    )
    return float((coef * sims).sum() / coef.sum())


def expected_similarity_row(provider, omega: np.ndarray, x: int) -> np.ndarray:
    """Expected similarity of item x to every subset item, position order."""
    return expected_similarity_rows(provider, omega, [x])[0]


def expected_similarity_rows(
    provider, omega: np.ndarray, item_ids: Sequence[int]
) -> np.ndarray:
    """Expected-similarity rows for a batch of items, shape (len(ids), N)."""
    pos = provider.positions(item_ids)
    m = provider.n_channels
    coefs = np.stack([omega[j][pos][:, None] * omega[j][None, :] for j in range(m)])
    cmax = coefs.max(axis=0)
    coefs /= np.where(cmax > 0, cmax, 1.0)
    num = np.zeros_like(cmax)
    for j in range(m):
        num += coefs[j] * provider.sim_rows(j, item_ids)
    return num / coefs.sum(axis=0)


def partition_entropy(masses: np.ndarray) -> float:
    """Shannon entropy of a mass vector, with 0 log 0 = 0."""
    m = np.asarray(masses)
    m = m[m > 0]
    return float(-(m * np.log(m)).sum())


def _entropy_rows(masses: np.ndarray) -> np.ndarray:
    """Row-wise entropy of a (candidates, cells) mass matrix."""
    return -np.where(masses > 0, masses * np.log(np.where(masses > 0, masses, 1.0)), 0.0).sum(axis=1)


def assign_to_seeds(seed_rows: np.ndarray) -> np.ndarray:
    """Voronoi assignment: index of the most-similar seed, ties to the lowest."""
    return np.argmax(seed_rows, axis=0)


def _masses(assign: np.ndarray, p: np.ndarray, n_cells: int) -> np.ndarray:
    return np.bincount(assign, weights=p, minlength=n_cells)


class _RowCache:
    """Per-selection cache of expected-similarity rows, batch-filled."""

    def __init__(self, provider, omega: np.ndarray):
        self._provider = provider
        self._omega = omega
        self._rows: dict[int, np.ndarray] = {}

    def rows(self, positions: Sequence[int]) -> np.ndarray:
        ids = self._provider.ids
        missing = [pos for pos in positions if pos not in self._rows]
        if missing:
            batch = expected_similarity_rows(
                self._provider, self._omega, [int(ids[pos]) for pos in missing]
            )
            for pos, row in zip(missing, batch):
                self._rows[pos] = row
        return np.vstack([self._rows[pos] for pos in positions])

    def row(self, pos: int) -> np.ndarray:
        return self.rows([pos])[0]


def _pick_winner(entropies: np.ndarray, candidates: np.ndarray, ids: np.ndarray) -> tuple[int, float]:
    """Highest entropy; exact ties resolved to the lowest item id."""
    best = entropies.max()
    tied = candidates[entropies == best]
    return int(tied[np.argmin(ids[tied])]), float(best)


def select_display(
    posteriors: Posteriors,
    state: AuxiliaryState,
    provider,
    n: int,
    rng: np.random.Generator | None = None,
    exclude: tuple[int, ...] = (),
) -> DisplaySet:
    """Choose n seeds whose Voronoi cells balance the posterior mass.

    Seed 0 is always the posterior argmax.  Remaining slots are filled
    greedily: each tries the CANDIDATE_POOL highest-posterior unchosen items
    and keeps the one maximizing cell-mass entropy, followed by one
    refinement pass that swaps each non-argmax seed for its best same-cell
    replacement.  All ties break toward the lowest item id, so the result
    is deterministic; ``rng`` is accepted for interface stability but
    unused.  ``exclude`` drops recently shown items from candidacy (never
    from the argmax slot) unless too few items remain.
    """
    del rng
    p = posteriors.p
    ids = provider.ids
    n_sub = provider.n_items
    if n < 1:
        raise DisplayError("display size must be >= 1")
    if n > n_sub:
        raise DisplayError(f"subset of {n_sub} cannot fill a display of {n}")

    # Ties to lowest id: positions are id-ordered and the sort is stable.
    order = np.argsort(-p, kind="stable")

    if n == n_sub:
        return DisplaySet(
            seeds=tuple(int(ids[pos]) for pos in order),
            partition_mass=p[order].copy(),
        )

    excluded = {provider.position(e) for e in exclude if e in provider}
    if n_sub - len(excluded) < n:
        excluded = set()

    cache = _RowCache(provider, state.omega)

    seed0 = int(order[0])
    chosen = [seed0]
    best_sim = cache.row(seed0).copy()
    assign = np.zeros(n_sub, dtype=np.int64)
    masses = np.array([1.0])

    while len(chosen) < n:
        slot = len(chosen)
        taken_set = set(chosen)
        pool = np.array(
            [int(pos) for pos in order if pos not in excluded and int(pos) not in taken_set][
                :CANDIDATE_POOL
            ]
        )
        cand_rows = cache.rows(pool)
        # ties against existing seeds keep the lower (existing) index
        taken = cand_rows > best_sim[None, :]
        cell_losses = np.vstack(
            [taken @ (p * (assign == i)) for i in range(slot)]
        ).T
        new_masses = np.hstack(
            [masses[None, :] - cell_losses, cell_losses.sum(axis=1, keepdims=True)]
        )
        win, _ = _pick_winner(_entropy_rows(new_masses), pool, ids)
        win_row = cache.row(win)
        assign = np.where(win_row > best_sim, slot, assign)
        best_sim = np.maximum(best_sim, win_row)
        chosen.append(win)
        masses = _masses(assign, p, slot + 1)

    seed_rows = cache.rows(chosen)
    assign = assign_to_seeds(seed_rows)
    masses = _masses(assign, p, n)
    current_entropy = partition_entropy(masses)

    # Refinement: each non-argmax seed may trade places with a member of its
    # own cell if that improves entropy.
    for s in range(1, n):
        top2 = np.argsort(-seed_rows, kind="stable", axis=0)[:2]
        cols = np.arange(n_sub)
        first, second = top2[0], top2[1]
        assign_other = np.where(first == s, second, first)
        best_other = seed_rows[assign_other, cols]

        taken_set = set(chosen)
        cell = np.array(
            [
                int(pos)
                for pos in order
                if assign[pos] == s and int(pos) not in taken_set and pos not in excluded
            ][:CANDIDATE_POOL]
        )
        if cell.size == 0:
            continue
        cand_rows = cache.rows(cell)
        # a tie against a lower-indexed seed loses, against a higher one wins
        taken = (cand_rows > best_other[None, :]) | (
            (cand_rows == best_other[None, :]) & (s < assign_other[None, :])
        )
        kept = ~taken
        cell_masses = np.vstack(
            [kept @ (p * (assign_other == i)) for i in range(n)]
        ).T
        cell_masses[:, s] = taken @ p
        entropies = _entropy_rows(cell_masses)
        if entropies.max() > current_entropy:
            win, current_entropy = _pick_winner(entropies, cell, ids)
            chosen[s] = win
            seed_rows[s] = cache.row(win)
            assign = assign_to_seeds(seed_rows)
            masses = _masses(assign, p, n)

    return DisplaySet(
        seeds=tuple(int(ids[pos]) for pos in chosen),
        partition_mass=masses,
    )


def top_posterior_display(posteriors: Posteriors, state: AuxiliaryState, provider, n: int) -> DisplaySet:
    """Baseline selector: the n highest-posterior items, no balancing."""
    p = posteriors.p
    if n > provider.n_items:
        raise DisplayError(f"subset of {provider.n_items} cannot fill a display of {n}")
    order = np.argsort(-p, kind="stable")
    if n == provider.n_items:
        return DisplaySet(
            seeds=tuple(int(provider.ids[pos]) for pos in order),
            partition_mass=p[order].copy(),
        )
    chosen = [int(pos) for pos in order[:n]]
    seed_rows = expected_similarity_rows(
        provider, state.omega, [int(provider.ids[pos]) for pos in chosen]
    )
    masses = _masses(assign_to_seeds(seed_rows), p, n)
    return DisplaySet(
        seeds=tuple(int(provider.ids[pos]) for pos in chosen),
        partition_mass=masses,
    )

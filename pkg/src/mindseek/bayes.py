"""Coupled posterior inference over targets and feature channels.

Two latent variables drive a session: the target item Y and the channel W
the user judges similarity by.  Because the two are dependent, the engine
tracks the auxiliary conditionals

    rho[k, j]   = P(Y = k | clicks so far, W = j)      (N x M, columns sum 1)
    omega[j, k] = P(W = j | clicks so far, Y = k)      (M x N, columns sum 1)

Each click multiplies both by the answer likelihood and renormalizes; the
marginals p (over items) and w (over channels) are then the probability
vectors fixed under p = rho @ w, w = omega @ p, i.e. the eigenvalue-1
eigenvector of the column-stochastic product rho @ omega.

``JointLikelihood`` is the brute-force cross-check: the full N x M joint
table updated exactly, whose marginals the fixed point must reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Entries are floored at AUX_FLOOR * column-max before each renormalization
# so no item or channel is ever annihilated and the stochastic product stays
# irreducible.  TINY (the smallest subnormal) backstops the relative floor,
# which itself underflows to zero once a column's maximum drops below 1e-8.
AUX_FLOOR = 1e-300
TINY = 5e-324

SOLVER_TOL = 1e-12
SOLVER_MAX_SWEEPS = 10_000


class FeedbackError(ValueError):
    """Click/display pair violating the feedback contract."""


class ConvergenceError(RuntimeError):
    """Posterior fixed-point iteration failed to converge."""


@dataclass(frozen=True)
class Feedback:
    """One iteration of evidence: the display shown and the item clicked."""

    display: tuple[int, ...]
    click: int

    def __post_init__(self) -> None:
        if len(self.display) == 0:
            raise FeedbackError("display is empty")
        if len(set(self.display)) != len(self.display):
            raise FeedbackError("display contains duplicates")
        if self.click not in self.display:
            raise FeedbackError(f"click {self.click} not among displayed items")


@dataclass
class Posteriors:
    """Marginal beliefs: p over items, w over channels."""

    p: np.ndarray
    w: np.ndarray

    @staticmethod
    def uniform(n_items: int, n_channels: int) -> "Posteriors":
        return Posteriors(
            p=np.full(n_items, 1.0 / n_items),
            w=np.full(n_channels, 1.0 / n_channels),
        )

    def validate(self, atol: float = 1e-9) -> None:
        for name, vec in (("p", self.p), ("w", self.w)):
            if not np.all(vec > 0):
                raise AssertionError(f"{name} has non-positive entries")
            if abs(vec.sum() - 1.0) > atol:
                raise AssertionError(f"{name} sums to {vec.sum()!r}, not 1")


@dataclass
class AuxiliaryState:
    """Column-stochastic conditionals rho (N x M) and omega (M x N)."""

    rho: np.ndarray
    omega: np.ndarray
    t: int = 0

    @staticmethod
    def uniform(n_items: int, n_channels: int) -> "AuxiliaryState":
        return AuxiliaryState(
            rho=np.full((n_items, n_channels), 1.0 / n_items),
            omega=np.full((n_channels, n_items), 1.0 / n_channels),
            t=0,
        )

    @property
    def n_items(self) -> int:
        return self.rho.shape[0]

    @property
    def n_channels(self) -> int:
        return self.rho.shape[1]

    def validate(self, atol: float = 1e-9) -> None:
        for name, mat in (("rho", self.rho), ("omega", self.omega)):
            if not np.all(mat > 0):
                raise AssertionError(f"{name} has non-positive entries")
            err = np.abs(mat.sum(axis=0) - 1.0).max()
            if err > atol:
                raise AssertionError(f"{name} columns off stochastic by {err:g}")


def answer_likelihood(provider, display, i: int, k: int, j: int) -> float:
    """P(click = i | target = k, channel = j) for one displayed item.

    The user picks, among displayed items, proportionally to similarity to
    the hypothesized target: s_j(i, k) / sum over the display of s_j(l, k).
    """
    display = tuple(display)
    if i not in display:
        raise FeedbackError(f"item {i} is not displayed")
    num = provider.similarity(j, i, k)
    den = sum(provider.similarity(j, l, k) for l in display)
    return num / den


def click_likelihoods(provider, feedback: Feedback) -> np.ndarray:
    """Answer likelihood of the observed click for every (target, channel).

    Returns the (N, M) matrix A with A[k, j] = P(click | Y=k, W=j), in
    subset-position order over k.
    """
    n, m = provider.n_items, provider.n_channels
    out = np.empty((n, m))
    for j in range(m):
        num = provider.sim_row(j, feedback.click)
        den = np.zeros(n)
        for l in feedback.display:
            den += provider.sim_row(j, l)
        out[:, j] = num / den
    return out


def _floor_columns(mat: np.ndarray) -> np.ndarray:
    floor = np.maximum(AUX_FLOOR * mat.max(axis=0, keepdims=True), TINY)
    return np.maximum(mat, floor)


def _normalize_columns(mat: np.ndarray) -> np.ndarray:
    return mat / mat.sum(axis=0, keepdims=True)


def update_auxiliary(
    state: AuxiliaryState,
    provider,
    feedback: Feedback,
    *,
    update_omega: bool = True,
) -> AuxiliaryState:
    """Fold one click into the auxiliary conditionals.

    Both matrices multiply elementwise by the click likelihood and
    renormalize per column.  ``update_omega=False`` freezes the channel
    conditional (the late-fusion baseline: channels tracked independently,
    merged with fixed uniform weights).
    """
    a = click_likelihoods(provider, feedback)
    rho = _normalize_columns(_floor_columns(state.rho * a))
    if update_omega:
        omega = _normalize_columns(_floor_columns(state.omega * a.T))
    else:
        omega = state.omega.copy()
    return AuxiliaryState(rho=rho, omega=omega, t=state.t + 1)


def solve_posteriors(
    state: AuxiliaryState,
    *,
    warm_start: np.ndarray | None = None,
    tol: float = SOLVER_TOL,
    max_sweeps: int = SOLVER_MAX_SWEEPS,
) -> Posteriors:
    """Marginals as the fixed point of the alternation p <- rho w, w <- omega p.

    rho @ omega is column-stochastic with strictly positive entries (the
    floor guarantees it), so power iteration converges to its unique
    eigenvalue-1 probability vector.  A warm start from the previous
    round's posterior makes the per-click cost a handful of sweeps.

    When the conditionals have collapsed so far that the blocks coupling
    items to channels sit near float underflow, the subdominant eigenvalue
    touches 1 and the iteration stops making progress; that state is
    detected (no meaningful decay over a 100-sweep window) and reported as
    ConvergenceError so the caller can fall back to exact joint marginals.
    """
    n = state.n_items
    if warm_start is not None:
        p = np.array(warm_start, dtype=np.float64)
        p /= p.sum()
    else:
        p = np.full(n, 1.0 / n)
    window_diff = None
    for sweep in range(1, max_sweeps + 1):
        w = state.omega @ p
        w /= w.sum()
        p_next = state.rho @ w
        p_next /= p_next.sum()
        diff = np.abs(p_next - p).sum()
        p = p_next
        if diff < tol:
            break
        if sweep % 100 == 0:
            if window_diff is not None and diff > window_diff * np.exp(-1.0):
                raise ConvergenceError(
                    f"posterior iteration stagnated at {diff:g} after {sweep} sweeps"
                )
            window_diff = diff
    else:
        raise ConvergenceError(
            f"posterior iteration did not reach {tol:g} in {max_sweeps} sweeps"
        )
    w = state.omega @ p
    w /= w.sum()
    return Posteriors(p=p, w=w)


@dataclass
class JointLikelihood:
    """Exact joint table over (target, channel): the brute-force oracle.

    table[k, j] is proportional to the prior times the product of all
    observed answer likelihoods, renormalized to total mass 1 after every
    update.  Kept exact (no flooring) so it can arbitrate the factored
    implementation.
    """

    table: np.ndarray

    @staticmethod
    def uniform(n_items: int, n_channels: int) -> "JointLikelihood":
        return JointLikelihood(np.full((n_items, n_channels), 1.0 / (n_items * n_channels)))

    def marginals(self) -> Posteriors:
        p = self.table.sum(axis=1)
        w = self.table.sum(axis=0)
        return Posteriors(p=p / p.sum(), w=w / w.sum())

    def conditionals(self) -> tuple[np.ndarray, np.ndarray]:
        """(rho, omega) implied by the joint, for cross-checking updates."""
        rho = self.table / self.table.sum(axis=0, keepdims=True)
        omega = (self.table / self.table.sum(axis=1, keepdims=True)).T
        return rho, omega


def update_joint_oracle(joint: JointLikelihood, provider, feedback: Feedback) -> JointLikelihood:
    """Multiply the joint by the observed click likelihood, renormalize globally."""
    table = joint.table * click_likelihoods(provider, feedback)
    table /= table.sum()
    # keep strictly positive after underflow; a no-op on healthy tables
    return JointLikelihood(np.maximum(table, TINY))

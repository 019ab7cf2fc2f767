"""One retrieval session: feedback intake, model refresh, next display.

A session never learns the target.  It only sees clicks; deciding that the
target has appeared (and freezing the session) is the caller's job, which
keeps the query-free contract structural.  Sessions are single-writer and
fully deterministic given their seed, so a transcript of clicks is a
complete, replayable snapshot.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import bayes, display
from .catalog import (
    AggregateSimilarityProvider,
    Catalog,
    SimilarityProvider,
    filter_items,
)

log = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "mindseek-session-v1"

METHODS = ("reweight", "fixed_weight", "late_fusion")


class SessionError(RuntimeError):
    """Transition attempted that the session state forbids."""


class Status(str, enum.Enum):
    RUNNING = "running"
    APPROVED_BY_SYSTEM = "approved_by_system"
    APPROVED_BY_USER = "approved_by_user"
    ABANDONED = "abandoned"


@dataclass(frozen=True)
class SessionConfig:
    n_display: int = 8
    method: str = "reweight"
    max_iterations: int = 50
    exclude_redisplayed: bool = True
    solver_tol: float = bayes.SOLVER_TOL
    solver_max_sweeps: int = bayes.SOLVER_MAX_SWEEPS
    dense_threshold: int = 2_000
    validate_each_step: bool = False

    def __post_init__(self) -> None:
        if self.n_display < 1:
            raise ValueError("n_display must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: Mapping) -> "SessionConfig":
        return SessionConfig(**dict(data))


class Session:
    """Single retrieval session over a filtered catalog subset."""

    def __init__(
        self,
        catalog: Catalog,
        tag_query: Mapping[str, str] | None = None,
        config: SessionConfig | None = None,
        seed: int = 0,
        *,
        subset: Sequence[int] | None = None,
        provider=None,
    ):
        self.config = config or SessionConfig()
        self.seed = int(seed)
        self.tag_query = dict(tag_query) if tag_query is not None else None

        if subset is not None:
            self.subset = np.unique(np.asarray(subset, dtype=np.int64))
        elif self.tag_query:
            self.subset = filter_items(catalog, self.tag_query)
        else:
            self.subset = np.arange(catalog.n_items, dtype=np.int64)
        self._explicit_subset = subset is not None

        n = self.config.n_display
        if self.subset.size < n:
            raise SessionError(
                f"filtered subset has {self.subset.size} items, display needs {n}"
            )

        if provider is None:
            provider = SimilarityProvider(
                catalog, self.subset, dense_threshold=self.config.dense_threshold
            )
            if self.config.method == "fixed_weight":
                provider = AggregateSimilarityProvider(provider)
        if not np.array_equal(provider.ids, self.subset):
            raise SessionError("provider subset does not match the session subset")
        self.provider = provider
        self._reported_channels = catalog.n_channels

        self.aux = bayes.AuxiliaryState.uniform(self.subset.size, provider.n_channels)
        self.posteriors = bayes.Posteriors.uniform(self.subset.size, provider.n_channels)
        self.history: list[bayes.Feedback] = []
        self.status = Status.RUNNING
        # exact joint carried along as the fallback when the factored solve
        # degenerates; one elementwise multiply per click
        self._joint = bayes.JointLikelihood.uniform(self.subset.size, provider.n_channels)

        rng = np.random.default_rng(self.seed)
        initial = rng.choice(self.subset, size=n, replace=False)
        rows = display.expected_similarity_rows(
            provider, self.aux.omega, [int(i) for i in initial]
        )
        masses = np.bincount(
            display.assign_to_seeds(rows), weights=self.posteriors.p, minlength=n
        )
        self.current_display = display.DisplaySet(
            seeds=tuple(int(i) for i in initial), partition_mass=masses
        )
        if self.config.validate_each_step:
            self._validate()

    # --- read side --------------------------------------------------------

    @property
    def iteration(self) -> int:
        """Number of clicks folded in so far."""
        return self.aux.t

    @property
    def weights(self) -> np.ndarray:
        """Channel weights as reported to callers.

        The fixed-weight baseline runs internally on a single aggregate
        channel; its advertised weights stay uniform over the real channels
        for the whole session.
        """
        if self.config.method == "fixed_weight":
            m = self._reported_channels
            return np.full(m, 1.0 / m)
        return self.posteriors.w.copy()

    @property
    def is_running(self) -> bool:
        return self.status is Status.RUNNING

    # --- transitions ------------------------------------------------------

    def submit_click(self, clicked: int) -> None:
        """Fold one click in: update conditionals, re-solve, pick next display."""
        self._require_running()
        clicked = int(clicked)
        if clicked not in self.current_display.seeds:
            raise SessionError(f"item {clicked} is not in the current display")
        feedback = bayes.Feedback(display=self.current_display.seeds, click=clicked)

        aux = bayes.update_auxiliary(
            self.aux,
            self.provider,
            feedback,
            update_omega=self.config.method != "late_fusion",
        )
        joint = bayes.update_joint_oracle(self._joint, self.provider, feedback)
        try:
            posteriors = bayes.solve_posteriors(
                aux,
                warm_start=self.posteriors.p,
                tol=self.config.solver_tol,
                max_sweeps=self.config.solver_max_sweeps,
            )
        except bayes.ConvergenceError:
            # only the fully coupled method can degenerate (frozen-omega
            # variants converge in two sweeps), and there the joint marginals
            # are exactly what the fixed point would be
            log.debug(
                "posterior solve degenerate at t=%d; using exact joint marginals",
                aux.t,
            )
            posteriors = joint.marginals()

        exclude: tuple[int, ...] = ()
        if self.config.exclude_redisplayed:
            exclude = tuple(i for i in self.current_display.seeds if i != clicked)

        self.current_display = display.select_display(
            posteriors,
            aux,
            self.provider,
            self.config.n_display,
            exclude=exclude,
        )
        self.aux = aux
        self._joint = joint
        self.posteriors = posteriors
        self.history.append(feedback)
        if self.config.validate_each_step:
            self._validate()

    def mark_found(self) -> None:
        """User pressed "found it": terminal approved-by-user state."""
        self._require_running()
        self.status = Status.APPROVED_BY_USER

    def mark_abandoned(self) -> None:
        self._require_running()
        self.status = Status.ABANDONED

    def mark_system_approved(self) -> None:
        """Caller-detected success: the known target entered the display."""
        self._require_running()
        self.status = Status.APPROVED_BY_SYSTEM

    def _require_running(self) -> None:
        if self.status is not Status.RUNNING:
            raise SessionError(f"session is terminal ({self.status.value})")

    def _validate(self) -> None:
        self.posteriors.validate()
        self.aux.validate()
        assert len(self.history) == self.aux.t
        product_cols = (self.aux.rho @ self.aux.omega).sum(axis=0)
        assert np.abs(product_cols - 1.0).max() < 1e-9

    # --- persistence ------------------------------------------------------

    def snapshot(self) -> dict:
        """Replayable transcript; probabilistic state is recomputed on load."""
        return {
            "format": SNAPSHOT_FORMAT,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "tag_query": self.tag_query,
            "subset": [int(i) for i in self.subset] if self._explicit_subset else None,
            "history": [
                {"display": list(fb.display), "click": fb.click} for fb in self.history
            ],
            "status": self.status.value,
        }

    @classmethod
    def replay(cls, catalog: Catalog, snapshot: Mapping, *, provider=None) -> "Session":
        """Rebuild a session by re-running its transcript."""
        if snapshot.get("format") != SNAPSHOT_FORMAT:
            raise SessionError(f"unknown snapshot format {snapshot.get('format')!r}")
        session = cls(
            catalog,
            tag_query=snapshot.get("tag_query"),
            config=SessionConfig.from_dict(snapshot["config"]),
            seed=snapshot["seed"],
            subset=snapshot.get("subset"),
            provider=provider,
        )
        for entry in snapshot["history"]:
            recorded = tuple(int(i) for i in entry["display"])
            if recorded != session.current_display.seeds:
                raise SessionError(
                    f"replay diverged at t={session.iteration}: "
                    f"expected display {recorded}, got {session.current_display.seeds}"
                )
            session.submit_click(int(entry["click"]))
        status = Status(snapshot["status"])
        if status is not Status.RUNNING:
            session.status = status
        return session


def start_session(
    catalog: Catalog,
    tag_query: Mapping[str, str] | None = None,
    config: SessionConfig | None = None,
    seed: int = 0,
    *,
    subset: Sequence[int] | None = None,
    provider=None,
) -> Session:
    """Open a session: uniform priors, a random first display drawn with ``seed``."""
    return Session(
        catalog, tag_query=tag_query, config=config, seed=seed, subset=subset, provider=provider
    )

"""Simulated users, game harness, metrics, and experiment presets.

A "game" is one retrieval session with a known target that only the
harness sees.  The session ends approved-by-system the moment the target
appears in the display, or abandoned when the iteration cap is hit.
Simulated users span the two extremes the engine is bracketed by: the
ideal user clicks exactly per the engine's current metric, the random user
clicks blindly, and the noisy user sits in between (softmax temperature
plus an epsilon of outright random clicks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .catalog import AggregateSimilarityProvider, Catalog, SimilarityProvider, generate_catalog
from .session import Session, SessionConfig, start_session

AS, AU, GA = "AS", "AU", "GA"

DEFAULT_TEMPERATURE = 0.5
DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class UserModel:
    """Click policy: ideal (argmax), random, or noisy (annealed + epsilon).

    A noisy user by default judges with the engine's current channel
    weights (the system metric).  ``channel_bias`` gives the user a metric
    of their own instead: all judgment mass on one channel, regardless of
    what the engine believes.  That mismatch is what separates re-weighting
    from fixed-metric baselines.
    """

    kind: str
    temperature: float = DEFAULT_TEMPERATURE
    epsilon: float = DEFAULT_EPSILON
    channel_bias: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("ideal", "random", "noisy"):
            raise ValueError(f"unknown user kind {self.kind!r}")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must be in [0, 1)")
        if self.channel_bias is not None and self.channel_bias < 0:
            raise ValueError("channel_bias must be a channel index")


@dataclass
class GameRecord:
    """One finished game: ending status, iteration count, weight history."""

    target: int
    status: str
    iterations: int
    weight_trace: np.ndarray
    method: str

    @property
    def final_weights(self) -> np.ndarray:
        return self.weight_trace[-1]


def mixture_probabilities(
    session: Session,
    q: int,
    *,
    provider=None,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """P(click = i | target = q) for each displayed item.

    Mixes the per-channel answer likelihoods with channel weights for q:
    sum_j w_j * s_j(i, q) / sum_l s_j(l, q), summing to 1 over the display.
    The defaults follow the system metric (the session's provider and its
    current omega column for q); pass ``provider``/``weights`` to model a
    user with a metric of their own.
    """
    provider = provider if provider is not None else session.provider
    display = session.current_display.seeds
    qpos = provider.position(q)
    if weights is None:
        weights = session.aux.omega[:, qpos]
    probs = np.zeros(len(display))
    for j in range(provider.n_channels):
        sims = np.array([provider.similarity(j, i, q) for i in display])
        probs += weights[j] * sims / sims.sum()
    return probs


def ideal_click(session: Session, q: int) -> int:
    """The displayed item maximizing the system-metric mixture, ties to lowest id."""
    display = session.current_display.seeds
    probs = mixture_probabilities(session, q)
    best = probs.max()
    return min(i for i, pr in zip(display, probs) if pr == best)


def random_click(session: Session, rng: np.random.Generator) -> int:
    return int(rng.choice(session.current_display.seeds))


def noisy_click(
    session: Session,
    q: int,
    model: UserModel,
    rng: np.random.Generator,
    *,
    provider=None,
) -> int:
    """Epsilon-random, otherwise a temperature-annealed draw over the mixture.

    The softmax runs over log-mixture scores, i.e. items are sampled with
    probability proportional to p_i^(1/temperature): temperature 1 clicks
    proportionally to perceived closeness, temperature -> 0 recovers the
    ideal user's argmax.  A channel-biased user judges with their own
    one-hot weights over ``provider`` (the real channels, not whatever view
    the engine happens to run on).
    """
    display = session.current_display.seeds
    if model.epsilon > 0 and rng.random() < model.epsilon:
        return int(rng.choice(display))
    weights = None
    if model.channel_bias is not None:
        provider = provider if provider is not None else session.provider
        if model.channel_bias >= provider.n_channels:
            raise ValueError("channel_bias outside the provider's channels")
        weights = np.zeros(provider.n_channels)
        weights[model.channel_bias] = 1.0
    z = np.log(mixture_probabilities(session, q, provider=provider, weights=weights))
    z /= model.temperature
    z -= z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    return int(rng.choice(display, p=probs))


def user_click(
    session: Session,
    q: int,
    model: UserModel,
    rng: np.random.Generator,
    *,
    provider=None,
) -> int:
    if model.kind == "ideal":
        return ideal_click(session, q)
    if model.kind == "random":
        return random_click(session, rng)
    return noisy_click(session, q, model, rng, provider=provider)


class GameRunner:
    """Plays games over one catalog subset, reusing similarity providers.

    Building kernels is the expensive step, so construct one runner per
    (catalog, subset) and call :meth:`play` per game.
    """

    def __init__(
        self,
        catalog: Catalog,
        subset: Sequence[int] | None = None,
        config: SessionConfig | None = None,
        channels: Sequence[int] | None = None,
    ):
        self.catalog = catalog
        self.config = config or SessionConfig()
        self.subset = (
            np.unique(np.asarray(subset, dtype=np.int64))
            if subset is not None
            else np.arange(catalog.n_items, dtype=np.int64)
        )
        self._base = SimilarityProvider(
            catalog,
            self.subset,
            channels=channels,
            dense_threshold=self.config.dense_threshold,
        )
        self._aggregate: AggregateSimilarityProvider | None = None

    def _provider_for(self, method: str):
        if method == "fixed_weight":
            if self._aggregate is None:
                self._aggregate = AggregateSimilarityProvider(self._base)
            return self._aggregate
        return self._base

    def play(
        self,
        target: int,
        user: UserModel,
        method: str = "reweight",
        seed: int = 0,
    ) -> GameRecord:
        """Run one game to termination (target displayed, or iteration cap)."""
        if int(target) not in self._base:
            raise ValueError(f"target {target} outside the active subset")
        config = self.config if self.config.method == method else SessionConfig(
            **{**self.config.to_dict(), "method": method}
        )
        session = start_session(
            self.catalog,
            config=config,
            seed=seed,
            subset=self.subset,
            provider=self._provider_for(method),
        )
        user_rng = np.random.default_rng([seed, 0xC11C2])

        trace: list[np.ndarray] = []
        status = GA
        while True:
            trace.append(session.weights)
            if target in session.current_display.seeds:
                status = AS
                session.mark_system_approved()
                break
            if len(trace) >= config.max_iterations:
                status = GA
                session.mark_abandoned()
                break
            # biased users judge by the real channels even when the engine
            # runs an aggregate view
            session.submit_click(
                user_click(session, target, user, user_rng, provider=self._base)
            )
        return GameRecord(
            target=int(target),
            status=status,
            iterations=len(trace),
            weight_trace=np.vstack(trace),
            method=method,
        )


def run_game(
    catalog: Catalog,
    subset: Sequence[int] | None,
    target: int,
    user: UserModel,
    method: str = "reweight",
    config: SessionConfig | None = None,
    seed: int = 0,
) -> GameRecord:
    """One-off convenience wrapper; prefer GameRunner for batches."""
    return GameRunner(catalog, subset, config).play(target, user, method, seed)


# --- metrics ----------------------------------------------------------------


@dataclass
class MetricsReport:
    n_games: int
    counts: dict[str, int]
    success_rate: float
    mean_iterations: float
    cumulative: np.ndarray
    mean_weights: np.ndarray

    def cumulative_at(self, t: int) -> float:
        """P(success within t iterations); 0 before the first success."""
        if self.cumulative.size == 0:
            return 0.0
        t = min(t, self.cumulative.size)
        return float(self.cumulative[t - 1]) if t >= 1 else 0.0


def summarize(records: Sequence[GameRecord]) -> MetricsReport:
    """Success rate, E(T) over successes, success CDF, and mean final weights."""
    if not records:
        raise ValueError("no game records to summarize")
    counts = {AS: 0, AU: 0, GA: 0}
    for rec in records:
        counts[rec.status] += 1
    successes = [rec.iterations for rec in records if rec.status in (AS, AU)]
    success_rate = len(successes) / len(records)
    mean_iterations = float(np.mean(successes)) if successes else math.nan
    if successes:
        max_t = max(successes)
        hits = np.bincount(successes, minlength=max_t + 1)[1:]
        cumulative = np.cumsum(hits) / len(successes)
    else:
        cumulative = np.zeros(0)
    mean_weights = np.mean([rec.final_weights for rec in records], axis=0)
    return MetricsReport(
        n_games=len(records),
        counts=counts,
        success_rate=success_rate,
        mean_iterations=mean_iterations,
        cumulative=cumulative,
        mean_weights=mean_weights,
    )


def _game_seeds(seed: int, count: int) -> np.ndarray:
    return np.random.default_rng([seed, 0x6A3E5]).integers(0, 2**31 - 1, size=count)


def _pick_targets(subset: np.ndarray, count: int, seed: int) -> np.ndarray:
    return np.random.default_rng([seed, 0x7A26E7]).choice(subset, size=count, replace=True)


def play_batch(
    runner: GameRunner,
    targets: Sequence[int],
    user: UserModel,
    method: str = "reweight",
    seed: int = 0,
) -> list[GameRecord]:
    """Play one game per target with per-game derived seeds."""
    seeds = _game_seeds(seed, len(targets))
    return [
        runner.play(int(t), user, method, seed=int(s)) for t, s in zip(targets, seeds)
    ]


# --- experiment presets -----------------------------------------------------


@dataclass
class ScalingResult:
    sizes: list[int]
    mean_iterations: list[float]
    slope: float
    intercept: float
    r_squared: float


def scaling_experiment(
    sizes: Sequence[int],
    games_per_size: int,
    user: UserModel | None = None,
    config: SessionConfig | None = None,
    seed: int = 0,
    *,
    m: int = 5,
    dims: int = 6,
    clusters: int = 16,
) -> ScalingResult:
    """E(T) as catalog size grows, with a linear fit of E(T) against log N."""
    user = user or UserModel("ideal")
    config = config or SessionConfig()
    rows: list[float] = []
    for idx, size in enumerate(sizes):
        catalog = generate_catalog(
            size, m, dims, clusters=clusters, seed=seed + 7919 * idx
        )
        runner = GameRunner(catalog, config=config)
        targets = _pick_targets(runner.subset, games_per_size, seed + idx)
        records = play_batch(runner, targets, user, "reweight", seed=seed + idx)
        report = summarize(records)
        rows.append(report.mean_iterations)
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.asarray(rows)
    if len(sizes) >= 2:
        slope, intercept = np.polyfit(x, y, 1)
        fitted = slope * x + intercept
        ss_res = float(((y - fitted) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, intercept, r_squared = 0.0, float(y[0]), 1.0
    return ScalingResult(
        sizes=[int(s) for s in sizes],
        mean_iterations=[float(v) for v in rows],
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
    )


@dataclass
class WeightReport:
    channel_names: tuple[str, ...]
    mean_weights: np.ndarray
    solo_mean_iterations: np.ndarray
    records: list[GameRecord] = field(repr=False, default_factory=list)


def weight_experiment(
    catalog: Catalog,
    games: int = 124,
    user: UserModel | None = None,
    config: SessionConfig | None = None,
    seed: int = 0,
) -> WeightReport:
    """Mean learned channel weights plus each channel's solo retrieval speed.

    The solo column answers "how fast would this channel be on its own":
    one single-channel run per channel, same targets and seeds.
    """
    user = user or UserModel("ideal")
    config = config or SessionConfig()
    runner = GameRunner(catalog, config=config)
    targets = _pick_targets(runner.subset, games, seed)
    records = play_batch(runner, targets, user, "reweight", seed=seed)
    mean_weights = summarize(records).mean_weights

    solo = np.zeros(catalog.n_channels)
    for j in range(catalog.n_channels):
        solo_runner = GameRunner(catalog, config=config, channels=[j])
        solo_records = play_batch(solo_runner, targets, user, "reweight", seed=seed)
        solo[j] = summarize(solo_records).mean_iterations
    return WeightReport(
        channel_names=tuple(ch.name for ch in catalog.channels),
        mean_weights=mean_weights,
        solo_mean_iterations=solo,
        records=records,
    )


@dataclass
class ConsistencyRow:
    target: int
    mean_iterations: float
    std_iterations: float


def consistency_experiment(
    catalog: Catalog,
    targets: Sequence[int],
    sessions_per_target: int,
    user: UserModel | None = None,
    config: SessionConfig | None = None,
    seed: int = 0,
) -> list[ConsistencyRow]:
    """Iteration spread per target when only the initial display varies."""
    user = user or UserModel("ideal")
    runner = GameRunner(catalog, config=config)
    rows = []
    seeds = _game_seeds(seed, sessions_per_target * len(targets))
    k = 0
    for target in targets:
        ts = []
        for _ in range(sessions_per_target):
            ts.append(runner.play(int(target), user, "reweight", seed=int(seeds[k])).iterations)
            k += 1
        rows.append(
            ConsistencyRow(
                target=int(target),
                mean_iterations=float(np.mean(ts)),
                std_iterations=float(np.std(ts)),
            )
        )
    return rows


def compare_methods(
    catalog: Catalog,
    games: int = 200,
    user: UserModel | None = None,
    config: SessionConfig | None = None,
    seed: int = 0,
    methods: Sequence[str] = ("reweight", "fixed_weight", "late_fusion"),
) -> dict[str, list[GameRecord]]:
    """Same targets and seeds, one run per inference method."""
    user = user or UserModel("noisy")
    runner = GameRunner(catalog, config=config)
    targets = _pick_targets(runner.subset, games, seed)
    return {
        method: play_batch(runner, targets, user, method, seed=seed)
        for method in methods
    }


def dominant_channel_catalog(
    n: int = 1_000,
    m: int = 5,
    dims: int = 6,
    seed: int = 0,
    *,
    dominant: int = 0,
) -> Catalog:
    """Synthetic catalog where one channel is far more discriminative.

    The dominant channel gets many tight, well-separated clusters; the
    other channels blur everything into a few overlapping blobs, so channel
    weighting has something to find.
    """
    separation = [0.6] * m
    noise = [0.6] * m
    clusters = [8] * m
    separation[dominant] = 3.0
    noise[dominant] = 0.25
    clusters[dominant] = 48
    return generate_catalog(
        n,
        m,
        dims,
        clusters=clusters,
        separation=separation,
        noise=noise,
        seed=seed,
    )

import numpy as np
import pytest
from scipy import stats

from mindseek.catalog import generate_catalog
from mindseek.session import SessionConfig, start_session
from mindseek.simulate import (
    GameRecord,
    GameRunner,
    UserModel,
    consistency_experiment,
    ideal_click,
    mixture_probabilities,
    noisy_click,
    run_game,
    scaling_experiment,
    summarize,
    weight_experiment,
)


@pytest.fixture(scope="module")
def catalog():
    return generate_catalog(60, 2, dims=3, clusters=6, seed=13)


@pytest.fixture(scope="module")
def runner(catalog):
    return GameRunner(catalog, config=SessionConfig(n_display=6))


def open_session(catalog, seed=0, n_display=6):
    return start_session(catalog, config=SessionConfig(n_display=n_display), seed=seed)


class TestUserModel:
    def test_bad_kind(self):
        with pytest.raises(ValueError):
            UserModel("telepathic")

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            UserModel("noisy", temperature=0.0)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            UserModel("noisy", epsilon=1.0)


class TestIdealClick:
    def test_single_channel_reduces_to_similarity_argmax(self):
        catalog = generate_catalog(30, 1, dims=3, clusters=4, seed=1)
        s = open_session(catalog, seed=4)
        q = next(i for i in range(30) if i not in s.current_display.seeds)
        picked = ideal_click(s, q)
        sims = {i: s.provider.similarity(0, i, q) for i in s.current_display.seeds}
        assert picked == max(sims, key=lambda i: (sims[i], -i))

    def test_matches_exhaustive_mixture(self, catalog):
        s = open_session(catalog, seed=9)
        q = next(i for i in range(60) if i not in s.current_display.seeds)
        probs = mixture_probabilities(s, q)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        by_hand = {}
        qpos = s.provider.position(q)
        for idx, i in enumerate(s.current_display.seeds):
            total = 0.0
            for j in range(2):
                num = s.provider.similarity(j, i, q)
                den = sum(s.provider.similarity(j, l, q) for l in s.current_display.seeds)
                total += s.aux.omega[j, qpos] * num / den
            by_hand[i] = total
            assert probs[idx] == pytest.approx(total, rel=1e-12)
        assert ideal_click(s, q) == max(by_hand, key=lambda i: (by_hand[i], -i))

    def test_tie_breaks_to_lowest_id(self, catalog, monkeypatch):
        s = open_session(catalog, seed=9)
        monkeypatch.setattr(
            "mindseek.simulate.mixture_probabilities",
            lambda session, q: np.full(len(session.current_display.seeds), 0.25),
        )
        assert ideal_click(s, 0) == min(s.current_display.seeds)


class TestNoisyClick:
    def test_zero_temperature_limit_is_ideal(self):
        # smooth kernels keep the mixture gaps far above the temperature
        catalog = generate_catalog(
            60, 2, dims=3, clusters=6, seed=13, calibrate_bandwidth=False
        )
        s = open_session(catalog, seed=2)
        q = next(i for i in range(60) if i not in s.current_display.seeds)
        model = UserModel("noisy", temperature=1e-9, epsilon=0.0)
        rng = np.random.default_rng(0)
        clicks = {noisy_click(s, q, model, rng) for _ in range(50)}
        assert clicks == {ideal_click(s, q)}

    def test_epsilon_one_limit_is_uniform(self, catalog):
        s = open_session(catalog, seed=3)
        q = next(i for i in range(60) if i not in s.current_display.seeds)
        model = UserModel("noisy", temperature=0.5, epsilon=0.999999)
        rng = np.random.default_rng(1)
        draws = [noisy_click(s, q, model, rng) for _ in range(10_000)]
        counts = [draws.count(i) for i in s.current_display.seeds]
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01

    def test_annealed_frequencies_match_probabilities(self, catalog):
        """At temperature 1 the noisy user clicks proportionally to the mixture."""
        s = open_session(catalog, seed=5)
        q = next(i for i in range(60) if i not in s.current_display.seeds)
        model = UserModel("noisy", temperature=1.0, epsilon=0.0)
        rng = np.random.default_rng(2)
        n_draws = 10_000
        draws = [noisy_click(s, q, model, rng) for _ in range(n_draws)]
        expected = mixture_probabilities(s, q)
        expected = expected / expected.sum()
        for idx, item in enumerate(s.current_display.seeds):
            observed = draws.count(item) / n_draws
            sigma = np.sqrt(expected[idx] * (1 - expected[idx]) / n_draws)
            assert abs(observed - expected[idx]) < 3 * sigma + 1e-9

    def test_half_temperature_sharpens_toward_ideal(self, catalog):
        """Lower temperature concentrates clicks on the ideal choice."""
        s = open_session(catalog, seed=5)
        q = next(i for i in range(60) if i not in s.current_display.seeds)
        rng = np.random.default_rng(3)
        best = ideal_click(s, q)

        def hit_rate(temp):
            model = UserModel("noisy", temperature=temp, epsilon=0.0)
            draws = [noisy_click(s, q, model, rng) for _ in range(2_000)]
            return draws.count(best) / 2_000

        assert hit_rate(0.5) > hit_rate(1.0)


class TestRunGame:
    def test_target_in_initial_display_ends_immediately(self, catalog, runner):
        probe = start_session(
            catalog, config=SessionConfig(n_display=6), seed=21, subset=runner.subset
        )
        target = probe.current_display.seeds[0]
        rec = runner.play(target, UserModel("ideal"), seed=21)
        assert rec.status == "AS"
        assert rec.iterations == 1
        assert rec.weight_trace.shape == (1, 2)

    def test_exhaustive_display_always_one_iteration(self):
        catalog = generate_catalog(6, 2, dims=2, clusters=2, seed=2)
        rec = run_game(
            catalog, None, 3, UserModel("ideal"), config=SessionConfig(n_display=6)
        )
        assert rec.iterations == 1
        assert rec.status == "AS"

    def test_target_outside_subset_rejected(self, catalog):
        runner = GameRunner(catalog, subset=range(30), config=SessionConfig(n_display=6))
        with pytest.raises(ValueError, match="outside"):
            runner.play(55, UserModel("ideal"))

    def test_ideal_user_terminates_and_traces_weights(self, runner):
        rec = runner.play(17, UserModel("ideal"), seed=3)
        assert rec.status == "AS"
        assert rec.weight_trace.shape == (rec.iterations, 2)
        assert np.allclose(rec.weight_trace.sum(axis=1), 1.0, atol=1e-9)

    def test_deterministic_given_seed(self, runner):
        a = runner.play(29, UserModel("noisy"), seed=6)
        b = runner.play(29, UserModel("noisy"), seed=6)
        assert a.iterations == b.iterations
        assert np.array_equal(a.weight_trace, b.weight_trace)

    def test_iteration_cap_records_abandonment(self, catalog):
        config = SessionConfig(n_display=6, max_iterations=2)
        runner = GameRunner(catalog, config=config)
        recs = [
            runner.play(t, UserModel("random"), seed=t) for t in range(25)
        ]
        capped = [r for r in recs if r.status == "GA"]
        assert capped, "a random user should miss at least once in 25 short games"
        assert all(r.iterations == 2 for r in capped)

    def test_methods_run_and_report_consistent_weights(self, runner):
        for method in ("reweight", "fixed_weight", "late_fusion"):
            rec = runner.play(11, UserModel("ideal"), method=method, seed=8)
            assert rec.method == method
            assert rec.weight_trace.shape[1] == 2
            if method != "reweight":
                assert np.allclose(rec.weight_trace, 0.5)


class TestSummarize:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize([])

    def test_paper_style_rate_arithmetic(self):
        """Counts of 192 AS + 59 AU + 61 GA give an 80.45% success rate."""
        records = []
        statuses = ["AS"] * 192 + ["AU"] * 59 + ["GA"] * 61
        for k, status in enumerate(statuses):
            records.append(
                GameRecord(
                    target=k,
                    status=status,
                    iterations=5,
                    weight_trace=np.array([[0.5, 0.5]]),
                    method="reweight",
                )
            )
        report = summarize(records)
        assert report.n_games == 312
        assert round(100 * report.success_rate, 2) == 80.45

    def test_single_game_statistics(self):
        rec = GameRecord(
            target=0,
            status="AS",
            iterations=5,
            weight_trace=np.full((5, 2), 0.5),
            method="reweight",
        )
        report = summarize([rec])
        assert report.mean_iterations == 5
        assert report.cumulative_at(5) == 1.0
        assert report.cumulative_at(4) == 0.0

    def test_cdf_nondecreasing_reaching_one(self, runner):
        recs = [runner.play(t, UserModel("ideal"), seed=t) for t in range(12)]
        report = summarize(recs)
        assert np.all(np.diff(report.cumulative) >= 0)
        assert report.cumulative[-1] == pytest.approx(1.0)

    def test_permutation_invariant(self, runner):
        recs = [runner.play(t, UserModel("ideal"), seed=t) for t in range(8)]
        a = summarize(recs)
        b = summarize(list(reversed(recs)))
        assert a.counts == b.counts
        assert a.mean_iterations == b.mean_iterations
        assert np.array_equal(a.cumulative, b.cumulative)
        assert np.allclose(a.mean_weights, b.mean_weights)


class TestExperiments:
    def test_scaling_minimal_size_is_single_iteration(self):
        config = SessionConfig(n_display=8)
        result = scaling_experiment([8], 3, UserModel("ideal"), config, seed=1, m=2, dims=2)
        assert result.mean_iterations == [1.0]

    def test_weight_experiment_symmetric_channels(self):
        """Identically generated channels earn close-to-uniform mean weights."""
        catalog = generate_catalog(
            80, 2, dims=3, clusters=[5, 5], separation=[1.0, 1.0], noise=[0.3, 0.3], seed=4
        )
        report = weight_experiment(
            catalog, games=40, config=SessionConfig(n_display=6), seed=2
        )
        assert report.mean_weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert abs(report.mean_weights[0] - 0.5) < 0.05
        assert abs(report.mean_weights[1] - 0.5) < 0.05

    def test_consistency_single_session_has_zero_stddev(self, catalog):
        rows = consistency_experiment(
            catalog, targets=[5], sessions_per_target=1, config=SessionConfig(n_display=6)
        )
        assert rows[0].std_iterations == 0.0

    def test_consistency_protocol_shape(self, catalog):
        rows = consistency_experiment(
            catalog,
            targets=list(range(10)),
            sessions_per_target=5,
            config=SessionConfig(n_display=6),
            seed=3,
        )
        assert len(rows) == 10
        assert all(r.mean_iterations >= 1 for r in rows)

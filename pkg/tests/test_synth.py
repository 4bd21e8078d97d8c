import numpy as np
import pytest
from scipy import stats

from cep3.ctdg import EventStream

from cep3.synth import (PRESETS, GroundTruthSpec, PairProcess, ThinningStats, community_preset,
                        hawkes_nll_quadrature, hawkes_nll_recursive, oracle_nll, pair_seed,
                        simulate, simulate_hawkes, simulate_poisson, splitmix64)


class TestSimulate:
    def test_poisson_count(self):
        s = simulate(GroundTruthSpec([0, 1], {(0, 1): PairProcess("poisson", 2.0)}, 1000.0, seed=0))
        assert abs(len(s) - 2000) <= 3 * np.sqrt(2000)

    def test_hawkes_alpha_zero_is_poisson(self):
        rng = np.random.default_rng(0)
        a = np.diff(simulate_hawkes(1.5, 0.0, 1.0, 3000.0, rng))
        b = np.diff(simulate_poisson(1.5, 3000.0, np.random.default_rng(1)))
        assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_hawkes_mean_rate(self):
        ts = simulate_hawkes(0.5, 0.5, 1.0, 20000.0, np.random.default_rng(2))
        assert len(ts) / 20000.0 == pytest.approx(1.0, rel=0.1)

    def test_thinning_stats(self):
        st = ThinningStats()
        simulate_hawkes(0.5, 0.5, 1.0, 500.0, np.random.default_rng(3), st)
        assert 0 < st.acceptance <= 1 and st.accepted <= st.proposed

    def test_merge_sorted_and_conserved(self):
        spec = community_preset("poisson", n_communities=2, size=3, rate=0.3, horizon=200.0, seed=4)
        s = simulate(spec)
        assert np.all(np.diff(s.t) >= 0)
        for idx, (u, v) in enumerate(sorted(spec.pairs)):
            alone = simulate_poisson(0.3, 200.0, np.random.default_rng(pair_seed(4, idx)))
            mask = (s.src == u) & (s.dst == v)
            np.testing.assert_array_equal(s.t[mask], alone)

    def test_no_cross_community_events(self):
        spec = community_preset(**PRESETS["hawkes"], seed=0)
        s = simulate(spec)
        comm = {v: q for q, c in enumerate(spec.communities) for v in c}
        assert all(comm[u] == comm[v] for u, v in zip(s.src.tolist(), s.dst.tolist()))

    def test_deterministic(self):
        spec = community_preset(**PRESETS["hawkes_slow"], seed=7)
        a, b = simulate(spec), simulate(spec)
        assert a.t.tobytes() == b.t.tobytes() and a.src.tobytes() == b.src.tobytes()

    def test_unstable_ground_truth(self):
        with pytest.raises(ValueError):
            PairProcess("hawkes", 0.1, alpha=1.0, beta=1.0)

    def test_json_round_trip(self):
        spec = community_preset(**PRESETS["hawkes"], seed=3)
        back = GroundTruthSpec.from_json(spec.to_json())
        assert back.pairs == spec.pairs and back.communities == spec.communities

    def test_seed_derivation(self):
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert pair_seed(1, 0) != pair_seed(1, 1) != pair_seed(2, 0)


class TestOracleNLL:
    def test_poisson_by_hand(self):
        spec = GroundTruthSpec([0, 1], {(0, 1): PairProcess("poisson", 1.0)}, 1.0)
        one = EventStream([0], [1], [1.0])
        assert oracle_nll(spec, one) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_recursion_matches_quadrature(self, seed):
        rng = np.random.default_rng(seed)
        times = np.sort(rng.uniform(0, 8, 10))
        mu, alpha, beta = rng.uniform(0.1, 1), rng.uniform(0, 0.9), rng.uniform(1, 3)
        a = hawkes_nll_recursive(times, mu, alpha, beta, 10.0)
        b = hawkes_nll_quadrature(times, mu, alpha, beta, 10.0)
        assert abs(a - b) < 1e-4

    def test_truth_beats_perturbations(self):
        spec = community_preset("poisson", n_communities=1, size=3, rate=0.5, horizon=2000.0, seed=1)
        s = simulate(spec)
        base = oracle_nll(spec, s)
        for f in (0.8, 1.2):
            pert = GroundTruthSpec(spec.nodes, {k: PairProcess("poisson", p.rate * f)
                                                for k, p in spec.pairs.items()}, spec.horizon)
            assert oracle_nll(pert, s) > base
        hk = community_preset("hawkes", n_communities=1, size=2, rate=0.2, alpha=0.5, beta=1.0,
                              horizon=3000.0, seed=2)
        sh = simulate(hk)
        base = oracle_nll(hk, sh)
        for f in (0.8, 1.2):
            pert = GroundTruthSpec(hk.nodes, {k: PairProcess("hawkes", p.rate * f, p.alpha, p.beta)
                                              for k, p in hk.pairs.items()}, hk.horizon)
            assert oracle_nll(pert, sh) > base

    def test_quadrature_method_flag(self):
        spec = community_preset("hawkes", n_communities=1, size=2, rate=0.3, alpha=0.4, beta=1.0,
                                horizon=20.0, seed=0)
        s = simulate(spec)
        assert oracle_nll(spec, s, "quadrature") == pytest.approx(oracle_nll(spec, s), abs=1e-4)
        with pytest.raises(ValueError):
            oracle_nll(spec, s, "bogus")

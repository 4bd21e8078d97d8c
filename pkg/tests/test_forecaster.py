import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from cep3.autodiff import ParameterSet, Tensor
from cep3.autodiff import ops as T
from cep3.encoder import TimeEncoder
from cep3.forecaster import (COUNTER, CapacityError, DestHead, ForecastHeads, ForecastStep,
                             IntensityHead, JointHead, SourceHead, chain_nll, dest_distribution,
                             dest_log_probs, forecast_step_greedy, intensities, joint_distribution,
                             joint_log_probs,
                             pair_log_probs_from_logits, predict_dt, source_distribution,
                             source_log_probs, write_forecast_csv)

from conftest import grad_check

D = 6


def _heads(seed=0, joint=False, budget=1 << 20):
    ps = ParameterSet(seed)
    te = TimeEncoder(ps, "time", 4)
    lam = IntensityHead(ps, D, 8)
    if joint:
        return ps, ForecastHeads(lam, joint=JointHead(ps, D, te, 8, pair_budget=budget))
    return ps, ForecastHeads(lam, source=SourceHead(ps, D, te, 8), dest=DestHead(ps, D, te, 8))


def _states(n, seed=0):
    return np.random.default_rng(seed).normal(size=(n, D))


class TestIntensity:
    def test_zero_weights(self):
        ps, heads = _heads()
        for t in heads.intensity.mlp.fc1.W, heads.intensity.mlp.fc1.b, \
                heads.intensity.mlp.fc2.W, heads.intensity.mlp.fc2.b:
            t.value = np.zeros_like(t.value)
        lam, total = intensities(heads.intensity, _states(5))
        np.testing.assert_allclose(lam.value, math.log(2), atol=1e-15)
        assert total.item() == pytest.approx(5 * math.log(2), abs=1e-14)

    @given(st.integers(0, 1000), st.integers(1, 9))
    def test_nonnegative_and_additive(self, seed, n):
        _, heads = _heads(seed % 7)
        lam, total = intensities(heads.intensity, _states(n, seed))
        assert np.all(lam.value >= 0)
        assert total.item() == max(float(np.sum(lam.value)), 1e-9)

    def test_gradient(self):
        ps, heads = _heads(1)
        H = _states(4, 1)
        assert grad_check(lambda: intensities(heads.intensity, H)[1],
                          list(ps.group("intensity").values())) <= 1e-4

    def test_empty_community(self):
        _, heads = _heads()
        with pytest.raises(ValueError):
            intensities(heads.intensity, np.zeros((0, D)))


class TestPredictDt:
    def test_mean(self):
        assert predict_dt(2.0) == 0.5

    def test_sample_mean(self):
        rng = np.random.default_rng(0)
        x = np.array([predict_dt(6.0, "sample", rng) for _ in range(100_000)])
        assert abs(x.mean() - 1 / 6) <= 0.02 / 6

    def test_superposition(self):
        rng = np.random.default_rng(1)
        n = 100_000
        mins = np.min(np.stack([rng.exponential(1 / r, n) for r in (1.0, 2.0, 3.0)]), axis=0)
        draws = np.array([predict_dt(6.0, "sample", rng) for _ in range(n)])
        assert stats.ks_2samp(mins, draws).pvalue > 0.01

    @pytest.mark.parametrize("rate", [0.0, -1.0, float("nan")])
    def test_bad_rate(self, rate):
        with pytest.raises(ValueError):
            predict_dt(rate)


class TestEntityHeads:
    @given(st.integers(0, 1000), st.integers(1, 12), st.floats(0, 50))
    def test_distributions_sum_to_one(self, seed, n, dt):
        _, heads = _heads(seed % 5)
        H = _states(n, seed)
        assert abs(source_distribution(heads.source, H, dt).sum() - 1) < 1e-6
        assert abs(dest_distribution(heads.dest, H, n - 1, dt).sum() - 1) < 1e-6

    def test_identical_states_uniform(self):
        _, heads = _heads(2)
        H = np.tile(_states(1, 2), (5, 1))
        np.testing.assert_allclose(source_distribution(heads.source, H, 1.0), 0.2, atol=1e-12)
        np.testing.assert_allclose(dest_distribution(heads.dest, H, 3, 1.0), 0.2, atol=1e-12)

    def test_single_node(self):
        _, heads = _heads()
        H = _states(1)
        assert source_distribution(heads.source, H, 0.5)[0] == pytest.approx(1.0)
        assert dest_distribution(heads.dest, H, 0, 0.5)[0] == pytest.approx(1.0)

    def test_source_sensitivity(self):
        _, heads = _heads(3)
        H = _states(5, 3)
        p0 = dest_distribution(heads.dest, H, 0, 1.0)
        p1 = dest_distribution(heads.dest, H, 1, 1.0)
        assert 0.5 * np.abs(p0 - p1).sum() > 0

    def test_masked_self_loop(self):
        ps = ParameterSet(0)
        te = TimeEncoder(ps, "time", 4)
        head = DestHead(ps, D, te, 8, mask_self=True)
        p = dest_distribution(head, _states(4), 2, 1.0)
        assert p[2] < 1e-300 and abs(p.sum() - 1) < 1e-9

    def test_shift_invariance(self):
        _, heads = _heads(4)
        H = _states(4, 4)
        base = source_distribution(heads.source, H, 1.0)
        heads.source.mlp.fc2.b.value = heads.source.mlp.fc2.b.value + 17.0
        np.testing.assert_allclose(source_distribution(heads.source, H, 1.0), base, atol=1e-12)


class TestJoint:
    @pytest.mark.parametrize("n", [2, 5, 17])
    def test_chain_induces_distribution(self, n):
        _, heads = _heads(n)
        H = _states(n, n)
        pu = source_distribution(heads.source, H, 0.7)
        total = sum(pu[u] * dest_distribution(heads.dest, H, u, 0.7).sum() for u in range(n))
        assert abs(total - 1) < 1e-6
        joint = np.array([pu[u] * dest_distribution(heads.dest, H, u, 0.7) for u in range(n)])
        assert abs(joint.sum() - 1) < 1e-6

    def test_two_nodes(self):
        _, heads = _heads(joint=True)
        p = joint_distribution(heads.joint, _states(2), 1.0)
        assert p.shape == (2, 2) and abs(p.sum() - 1) < 1e-12

    def test_identical_states_uniform(self):
        _, heads = _heads(joint=True)
        H = np.tile(_states(1), (3, 1))
        np.testing.assert_allclose(joint_distribution(heads.joint, H, 1.0), 1 / 9, atol=1e-12)

    def test_capacity_error(self):
        _, heads = _heads(joint=True, budget=15)
        joint_distribution(heads.joint, _states(3), 1.0)
        with pytest.raises(CapacityError):
            joint_distribution(heads.joint, _states(4), 1.0)

    def test_chain_and_joint_agree_on_tied_logits(self):
        _, heads = _heads(5)
        n = 6
        H = _states(n, 5)
        lu = source_log_probs(heads.source, H, 0.3).value
        lv = np.array([dest_log_probs(heads.dest, H, u, 0.3).value for u in range(n)])
        lj = pair_log_probs_from_logits(lu[:, None] + lv).value
        for u in range(n):
            for v in range(n):
                assert abs(chain_nll(lu, lv, u, v) - (-lj[u, v])) < 1e-9

    def test_joint_gradient(self):
        ps, heads = _heads(6, joint=True)
        H = Tensor(_states(3, 6), requires_grad=True)
        w = np.random.default_rng(6).normal(size=9)

        def f():
            return T.tsum(T.mul(joint_log_probs(heads.joint, H, 0.4), w))

        assert grad_check(f, [H] + list(ps.group("joint").values())) <= 1e-4


class TestCounters:
    @pytest.mark.parametrize("n", [8, 32])
    def test_logit_counts(self, n):
        _, hier = _heads(0)
        _, joint = _heads(0, joint=True)
        H = _states(n)
        COUNTER.reset()
        forecast_step_greedy(hier, H, list(range(n)), 0.0)
        assert COUNTER["source"] == n and COUNTER["dest"] == n
        COUNTER.reset()
        forecast_step_greedy(joint, H, list(range(n)), 0.0)
        assert COUNTER["joint"] == n * n


class TestGreedy:
    def test_single_node(self):
        _, heads = _heads()
        s = forecast_step_greedy(heads, _states(1), [7], 3.0)
        assert (s.source, s.dest) == (7, 7)
        assert s.dt == pytest.approx(1 / s.rate_total) and s.t_abs == 3.0 + s.dt

    def test_symmetric_tie_break_lowest_id(self):
        _, heads = _heads()
        H = np.tile(_states(1), (4, 1))
        s = forecast_step_greedy(heads, H, [3, 5, 8, 9], 0.0)
        assert (s.source, s.dest) == (3, 3)
        _, jheads = _heads(joint=True)
        s = forecast_step_greedy(jheads, H, [3, 5, 8, 9], 0.0)
        assert (s.source, s.dest) == (3, 3)

    def test_deterministic(self):
        _, heads = _heads(9)
        H = _states(5, 9)
        a = forecast_step_greedy(heads, H, list(range(5)), 1.0)
        b = forecast_step_greedy(heads, H, list(range(5)), 1.0)
        assert (a.source, a.dest, a.dt) == (b.source, b.dest, b.dt)
        assert a.dt > 0 and abs(a.p_source.sum() - 1) < 1e-6 and abs(a.p_dest.sum() - 1) < 1e-6

    def test_sample_mode_seeded(self):
        _, heads = _heads(9)
        H = _states(5, 9)
        a = forecast_step_greedy(heads, H, list(range(5)), 0.0, "sample", np.random.default_rng(3))
        b = forecast_step_greedy(heads, H, list(range(5)), 0.0, "sample", np.random.default_rng(3))
        assert (a.source, a.dest, a.dt) == (b.source, b.dest, b.dt)

    def test_csv(self):
        import io
        buf = io.StringIO()
        steps = [ForecastStep(0.5, 1.5, 2, 3, 2.0, np.ones(1), np.ones(1))]
        write_forecast_csv(steps, buf)
        assert buf.getvalue() == "step,source,dest,dt,t_abs\n1,2,3,0.5,1.5\n"

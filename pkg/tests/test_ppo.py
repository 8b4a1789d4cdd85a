import numpy as np
import pytest

from promptedit import autodiff as ad
from promptedit.env import EpisodeTrace, StepRecord, collect_rollouts
from promptedit.errors import InvalidConfig, NonFiniteLoss, ShapeError
from promptedit.features import CANDIDATE_DIM, CandidateFeaturizer
from promptedit.network import Adam, NetworkConfig, PolicyNetwork, RunningMoments, log_probs_np
from promptedit.ppo import (
    BufferEntry,
    PPOConfig,
    RolloutBuffer,
    _pad_batch,
    compute_gae,
    ppo_update,
)


class TestPPOConfig:
    def test_defaults_valid(self):
        cfg = PPOConfig()
        assert cfg.clip_epsilon == 0.2 and cfg.gamma == 0.99

    @pytest.mark.parametrize(
        "kwargs",
        [{"clip_epsilon": 0.0}, {"clip_epsilon": 1.0}, {"gamma": 0.0}, {"gamma": 1.5},
         {"gae_lambda": 0.0}, {"minibatch_size": 0}, {"epochs_per_update": 0}],
    )
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(InvalidConfig):
            PPOConfig(**kwargs)


class TestGAE:
    def test_terminal_single_step(self):
        adv, ret = compute_gae([1.0], [0.5, 0.0], [1.0], gamma=0.99, lam=0.95)
        assert adv[0] == pytest.approx(0.5, abs=1e-12)
        assert ret[0] == pytest.approx(1.0, abs=1e-12)

    def test_two_step_hand_recursion(self):
        # delta_1 = 1 - 0.5 = 0.5; delta_0 = 0 + 0.99*0.5 - 0.5 = -0.005
        # A_0 = -0.005 + 0.99*0.95*0.5 = 0.46525
        adv, _ = compute_gae([0.0, 1.0], [0.5, 0.5, 0.0], [0.0, 1.0], 0.99, 0.95)
        assert adv[1] == pytest.approx(0.5, abs=1e-9)
        assert adv[0] == pytest.approx(0.46525, abs=1e-9)

    def test_lambda_zero_gives_one_step_deltas(self, rng):
        r = rng.normal(size=6)
        v = rng.normal(size=7)
        dones = np.zeros(6)
        dones[-1] = 1.0
        adv, _ = compute_gae(r, v, dones, gamma=0.9, lam=1e-12)
        deltas = r + 0.9 * v[1:] * (1 - dones) - v[:-1]
        np.testing.assert_allclose(adv, deltas, atol=1e-9)

    def test_gamma_lambda_one_is_monte_carlo(self, rng):
        r = rng.normal(size=5)
        v = rng.normal(size=6)
        v[-1] = 0.0
        dones = np.zeros(5)
        dones[-1] = 1.0
        adv, ret = compute_gae(r, v, dones, gamma=1.0, lam=1.0)
        future = np.cumsum(r[::-1])[::-1]  # sum of remaining rewards
        np.testing.assert_allclose(adv, future - v[:-1], atol=1e-12)
        np.testing.assert_allclose(ret, future, atol=1e-12)

    def test_mid_sequence_done_resets_carry(self):
        # two one-step episodes flattened together
        adv, _ = compute_gae([1.0, 2.0], [0.0, 0.0, 5.0], [1.0, 1.0], 0.99, 0.95)
        np.testing.assert_allclose(adv, [1.0, 2.0])

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            compute_gae([1.0], [0.5], [1.0], 0.99, 0.95)
        with pytest.raises(ShapeError):
            compute_gae([1.0], [0.5, 0.0], [1.0, 0.0], 0.99, 0.95)


def make_trace(rewards, values, query="q"):
    steps = []
    for t, (r, v) in enumerate(zip(rewards, values)):
        steps.append(
            StepRecord(
                obs=np.full(4, float(t)),
                cand=np.eye(3, CANDIDATE_DIM),
                action_index=t % 3,
                action=None,
                log_prob=-1.0,
                value=v,
                reward=r,
                raw_reward=r,
                done=t == len(rewards) - 1,
            )
        )
    tr = EpisodeTrace(
        query=query, correct=0, initial_score=0.0, final_score=sum(rewards),
        initial_state=None, final_state=None, initial_obs=None, final_obs=None, steps=steps,
    )
    return tr


class TestRolloutBuffer:
    def test_add_trace_populates_entries(self):
        buf = RolloutBuffer(0.99, 0.95)
        buf.add_trace(make_trace([1.0, 0.5], [0.2, 0.1]))
        assert len(buf) == 2
        adv, ret = compute_gae([1.0, 0.5], [0.2, 0.1, 0.0], [0.0, 1.0], 0.99, 0.95)
        assert buf.entries[0].advantage == pytest.approx(adv[0])
        assert buf.entries[1].ret == pytest.approx(ret[1])

    def test_truncated_trace_forced_terminal(self):
        buf = RolloutBuffer(0.99, 0.95)
        tr = make_trace([1.0, 1.0], [0.0, 0.0])
        tr.steps[-1].done = False  # cut short mid-episode
        buf.add_trace(tr)
        # last delta must not bootstrap beyond the data
        assert buf.entries[1].advantage == pytest.approx(1.0)

    def test_empty_trace_ignored(self):
        buf = RolloutBuffer(0.99, 0.95)
        buf.add_trace(make_trace([], []))
        assert len(buf) == 0

    def test_history_rows_match_prefix(self):
        buf = RolloutBuffer(0.99, 0.95)
        tr = make_trace([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
        buf.add_trace(tr)
        assert buf.entries[0].hist.shape == (0, CANDIDATE_DIM)
        np.testing.assert_array_equal(buf.entries[2].hist, tr.chosen_rows(2))

    def test_normalized_advantages(self):
        buf = RolloutBuffer(0.99, 0.95)
        buf.add_trace(make_trace([1.0, -1.0, 2.0, 0.5], [0.0] * 4))
        norm = buf.normalized_advantages()
        assert norm.mean() == pytest.approx(0.0, abs=1e-12)
        assert norm.std() == pytest.approx(1.0, abs=1e-9)

    def test_minibatch_indices_cover_buffer(self, rng):
        buf = RolloutBuffer(0.99, 0.95)
        buf.add_trace(make_trace([1.0] * 7, [0.0] * 7))
        seen = np.concatenate(list(buf.minibatch_indices(rng, 3)))
        assert sorted(seen.tolist()) == list(range(7))

    def test_clear(self):
        buf = RolloutBuffer(0.99, 0.95)
        buf.add_trace(make_trace([1.0], [0.0]))
        buf.clear()
        assert len(buf) == 0


def test_pad_batch_shapes():
    entries = [
        BufferEntry(
            obs=np.zeros(4), cand=np.ones((3, CANDIDATE_DIM)),
            hist=np.zeros((0, CANDIDATE_DIM)), action_index=0, old_log_prob=0.0, value=0.0,
        ),
        BufferEntry(
            obs=np.zeros(4), cand=np.ones((5, CANDIDATE_DIM)),
            hist=np.ones((2, CANDIDATE_DIM)), action_index=1, old_log_prob=0.0, value=0.0,
        ),
    ]
    obs, cand, cand_mask, hist, hist_mask = _pad_batch(entries)
    assert cand.shape == (2, 5, CANDIDATE_DIM) and hist.shape == (2, 2, CANDIDATE_DIM)
    np.testing.assert_array_equal(cand_mask, [[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
    np.testing.assert_array_equal(hist_mask, [[0, 0], [1, 1]])
    assert np.all(cand[0, 3:] == 0.0)


def bandit_setup(seed=0):
    cfg = NetworkConfig(
        obs_dim=4, candidate_dim=CANDIDATE_DIM, latent=12, heads=2, layers=1,
        head_hidden=8, ff_hidden=16, max_history=1,
    )
    net = PolicyNetwork(cfg, np.random.default_rng(seed))
    return net, cfg


def fill_buffer_preferring_action(net, cfg, rng, rewarded=0, episodes=16):
    """One-step episodes where only ``rewarded`` pays out."""
    buf = RolloutBuffer(0.99, 0.95)
    obs = np.zeros((1, cfg.obs_dim))
    cand = np.eye(3, CANDIDATE_DIM)[None, :, :]
    mask = np.ones((1, 3))
    h = np.zeros((1, 0, CANDIDATE_DIM))
    hm = np.zeros((1, 0))
    for _ in range(episodes):
        idx, lp, value = net.act(obs, cand, mask, h, hm, rng=rng)
        tr = EpisodeTrace(
            query="q", correct=0, initial_score=0.0, final_score=0.0,
            initial_state=None, final_state=None, initial_obs=None, final_obs=None,
            steps=[
                StepRecord(
                    obs=obs[0], cand=cand[0], action_index=int(idx[0]), action=None,
                    log_prob=float(lp[0]), value=float(value[0]),
                    reward=1.0 if idx[0] == rewarded else 0.0,
                    raw_reward=0.0, done=True,
                )
            ],
        )
        buf.add_trace(tr)
    return buf, (obs, cand, mask, h, hm)


class TestPPOUpdate:
    def test_empty_buffer_rejected(self):
        net, _ = bandit_setup()
        with pytest.raises(InvalidConfig):
            ppo_update(net, RolloutBuffer(0.99, 0.95), PPOConfig(), Adam(net.parameters(), 1e-3),
                       np.random.default_rng(0))

    def test_stats_reported(self, rng):
        net, cfg = bandit_setup()
        buf, _ = fill_buffer_preferring_action(net, cfg, rng)
        stats = ppo_update(
            net, buf, PPOConfig(minibatch_size=8), Adam(net.parameters(), 1e-4),
            np.random.default_rng(1),
        )
        for key in ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl"):
            assert key in stats and np.isfinite(stats[key])
        assert 0.0 <= stats["clip_fraction"] <= 1.0
        assert stats["entropy"] >= 0.0

    def test_update_shifts_probability_toward_reward(self, rng):
        net, cfg = bandit_setup()
        opt = Adam(net.parameters(), 3e-3)
        update_rng = np.random.default_rng(2)
        inputs = None
        for _ in range(10):
            buf, inputs = fill_buffer_preferring_action(net, cfg, rng, rewarded=1)
            ppo_update(net, buf, PPOConfig(minibatch_size=8, epochs_per_update=2), opt, update_rng)
        with ad.no_grad():
            logits, _ = net.forward(*inputs)
        probs = np.exp(log_probs_np(logits.data))[0]
        assert probs[1] > 1 / 3 + 0.1
        assert probs[1] == probs.max()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts_with_diagnostics(self, rng):
        net, cfg = bandit_setup()
        buf, _ = fill_buffer_preferring_action(net, cfg, rng)
        buf.entries[0].old_log_prob = 1e6  # ratio underflows to exp(-inf)-ish
        buf.entries[0].advantage = np.inf
        with pytest.raises(NonFiniteLoss) as err:
            ppo_update(net, buf, PPOConfig(minibatch_size=32), Adam(net.parameters(), 1e-4),
                       np.random.default_rng(3))
        assert "policy_loss" in err.value.diagnostics

    def test_parameters_stay_finite(self, env, rng):
        # integration against the real env: a couple of updates keep weights sane
        net_cfg = NetworkConfig(
            obs_dim=env.scorer.feature_dim, latent=12, heads=2, layers=1,
            head_hidden=8, ff_hidden=16, max_history=env.config.horizon,
        )
        net = PolicyNetwork(net_cfg, np.random.default_rng(0))
        rm = RunningMoments(net_cfg.obs_dim)
        fz = CandidateFeaturizer(env.task, env.pool)
        opt = Adam(net.parameters(), 1e-3)
        cfg = PPOConfig(minibatch_size=16, epochs_per_update=2)
        for it in range(3):
            traces = collect_rollouts(
                env, net, fz, rm,
                [("w0x0 w0x1", 0), ("w1x0 w1x1", 1)] * 2,
                np.random.SeedSequence((it, 1)),
            )
            buf = RolloutBuffer(cfg.gamma, cfg.gae_lambda)
            for tr in traces:
                buf.add_trace(tr)
            stats = ppo_update(net, buf, cfg, opt, rng)
            assert np.isfinite(stats["policy_loss"])
        for p in net.parameters():
            assert np.isfinite(p.data).all()

import json
import math

import numpy as np
import pytest

from _bandit import run_bandit
from erpbpnn.bpnn import (
    BpnnNet,
    forward_batch,
    init_params,
    net_to_doc,
    set_trainable_module,
)
from erpbpnn.ppo import (
    AdamState,
    PpoConfig,
    RewardNormalizer,
    RunningMeanStd,
    TrainingDiverged,
    adam_step,
    add_gae,
    clamp_log_std,
    clip_global_norm,
    clipped_surrogate,
    clipped_value_loss,
    collect_rollout,
    compute_gae,
    gaussian_entropy,
    gaussian_log_prob,
    ppo_update,
)
from erpbpnn.reacher import OBS_DIM, ArmSpec, VectorReacher


def gae_oracle(rewards, values, gamma, lam):
    """Brute-force double-loop advantage sum, truncated at episode ends."""
    n_eps, n_steps = rewards.shape
    adv = np.zeros_like(rewards)
    for e in range(n_eps):
        for t in range(n_steps):
            acc = 0.0
            for k in range(n_steps - t):
                v_next = values[e, t + k + 1] if t + k + 1 < n_steps else 0.0
                delta = rewards[e, t + k] + gamma * v_next - values[e, t + k]
                acc += (gamma * lam) ** k * delta
            adv[e, t] = acc
    return adv


def make_setup(backend=None, seed=0, n_envs=8, hidden_layers=2, hidden_size=2,
               links=(2, 3), lateral=True):
    actor = BpnnNet(OBS_DIM, hidden_layers, hidden_size, list(links),
                    lateral=lateral, backend_name=backend)
    critic = BpnnNet(OBS_DIM, hidden_layers, hidden_size, [1] * len(links),
                     lateral=lateral, backend_name=backend)
    init_params(actor, seed, out_gain=0.01)
    init_params(critic, seed + 1, out_gain=1.0)
    envs = []
    for m, n in enumerate(links):
        seqs = np.random.SeedSequence(seed + 10 + m).spawn(n_envs)
        envs.append(VectorReacher(ArmSpec.equal_links(n), n_envs,
                                  [np.random.default_rng(s) for s in seqs]))
    log_stds = [np.zeros(n) for n in links]
    return actor, critic, envs, log_stds


class TestRunningStats:
    def test_matches_flat_statistics(self, rng):
        rms = RunningMeanStd()
        chunks = [rng.standard_normal(50) * 3 + 1 for _ in range(10)]
        for c in chunks:
            rms.update(c)
        flat = np.concatenate(chunks)
        assert rms.mean == pytest.approx(flat.mean(), rel=1e-3)
        assert rms.var == pytest.approx(flat.var(), rel=1e-2)

    def test_normalizer_bounds_and_raw_untouched(self, rng):
        norm = RewardNormalizer(0.99, 4, clip=10.0)
        for _ in range(100):
            rewards = rng.standard_normal(4) * 1000
            raw = rewards.copy()
            out = norm.normalize(rewards, np.zeros(4, dtype=bool))
            assert np.all(np.abs(out) <= 10.0)
            np.testing.assert_array_equal(rewards, raw)

    def test_return_accumulator_resets_on_done(self):
        norm = RewardNormalizer(0.5, 2)
        norm.normalize(np.array([1.0, 1.0]), np.array([True, False]))
        np.testing.assert_array_equal(norm.returns, [0.0, 1.0])
        norm.normalize(np.array([1.0, 1.0]), np.array([False, False]))
        np.testing.assert_array_equal(norm.returns, [1.0, 1.5])


class TestGae:
    def test_lambda_zero_gives_td_residual(self, rng):
        rewards = rng.standard_normal((3, 6))
        values = rng.standard_normal((3, 6))
        adv, ret = compute_gae(rewards, values, gamma=0.9, lam=0.0)
        v_next = np.concatenate([values[:, 1:], np.zeros((3, 1))], axis=1)
        np.testing.assert_array_equal(adv, rewards + 0.9 * v_next - values)
        np.testing.assert_array_equal(ret, adv + values)

    def test_gamma_zero(self, rng):
        rewards = rng.standard_normal((2, 5))
        values = rng.standard_normal((2, 5))
        adv, _ = compute_gae(rewards, values, gamma=0.0, lam=0.95)
        np.testing.assert_array_equal(adv, rewards - values)

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(25):
            n_eps = int(rng.integers(1, 4))
            n_steps = int(rng.integers(2, 11))
            rewards = rng.standard_normal((n_eps, n_steps))
            values = rng.standard_normal((n_eps, n_steps))
            gamma = float(rng.uniform(0.8, 1.0))
            lam = float(rng.uniform(0.0, 1.0))
            adv, _ = compute_gae(rewards, values, gamma, lam)
            np.testing.assert_allclose(adv, gae_oracle(rewards, values, gamma, lam),
                                       atol=1e-10)

    def test_six_step_episode_oracle(self, rng):
        rewards = rng.standard_normal((1, 6))
        values = rng.standard_normal((1, 6))
        adv, _ = compute_gae(rewards, values, 0.99, 0.95)
        np.testing.assert_allclose(adv, gae_oracle(rewards, values, 0.99, 0.95),
                                   atol=1e-10)


class TestGaussianHead:
    def test_log_prob_matches_direct_formula(self, rng):
        mean = rng.standard_normal((7, 3))
        log_std = rng.uniform(-1, 0.5, size=3)
        actions = rng.standard_normal((7, 3))
        got = gaussian_log_prob(mean, log_std, actions)
        std = np.exp(log_std)
        expected = np.sum(
            -0.5 * ((actions - mean) / std) ** 2 - np.log(std)
            - 0.5 * math.log(2 * math.pi),
            axis=1,
        )
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_entropy(self):
        assert gaussian_entropy(np.zeros(2)) == pytest.approx(
            2 * 0.5 * (1 + math.log(2 * math.pi)))

    def test_clamp_mask(self):
        clamped, inside = clamp_log_std(np.array([-25.0, 0.0, 3.0]))
        np.testing.assert_array_equal(clamped, [-20.0, 0.0, 2.0])
        np.testing.assert_array_equal(inside, [0.0, 1.0, 0.0])


class TestSurrogate:
    def test_clipped_branch_exact_above(self):
        per, _ = clipped_surrogate(np.array([1.5]), np.array([2.0]), 0.2)
        assert per[0] == 1.2 * 2.0  # exactly the clipped branch

    def test_clipped_branch_exact_below(self):
        per, _ = clipped_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)
        assert per[0] == 0.8 * -1.0

    def test_never_exceeds_unclipped(self, rng):
        ratio = np.exp(rng.standard_normal(1000))
        adv = rng.standard_normal(1000) * 3
        per, _ = clipped_surrogate(ratio, adv, 0.2)
        assert np.all(per <= ratio * adv + 1e-12)

    def test_gradient_follows_selected_branch(self):
        ratio = np.array([1.5, 0.5, 1.0])
        adv = np.array([2.0, -1.0, 3.0])
        _, d_logp = clipped_surrogate(ratio, adv, 0.2)
        # Clipped-and-smaller branches have zero gradient.
        np.testing.assert_array_equal(d_logp, [0.0, 0.0, 3.0])


class TestClippedValueLoss:
    def test_saturated_clip_has_zero_gradient(self):
        per, d_v = clipped_value_loss(
            np.array([1.0]), np.array([0.0]), np.array([2.0]), 0.2)
        assert per[0] == pytest.approx((0.2 - 2.0) ** 2)
        assert d_v[0] == 0.0

    def test_inside_clip_behaves_like_mse(self):
        per, d_v = clipped_value_loss(
            np.array([0.1]), np.array([0.0]), np.array([2.0]), 0.2)
        assert per[0] == pytest.approx((0.1 - 2.0) ** 2)
        assert d_v[0] == pytest.approx(2 * (0.1 - 2.0))


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = np.array([1.0, -2.0])
        adam_step({"p": p}, {"p": np.zeros(2)}, AdamState(), lr=0.1)
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_constant_gradient_limit(self):
        p = np.array([0.0])
        state = AdamState()
        g = np.array([0.3])
        last = p.copy()
        for _ in range(500):
            last = p.copy()
            adam_step({"p": p}, {"p": g}, state, lr=0.01)
        assert abs(abs(float(p[0] - last[0])) - 0.01) < 1e-4  # step -> lr * sign(g)

    def test_three_step_hand_trace(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = np.array([1.0])
        state = AdamState()
        grads = [0.5, -0.25, 0.8]
        # Hand-run recurrence in plain scalars.
        ph, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ph -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        for g in grads:
            adam_step({"p": p}, {"p": np.array([g])}, state, lr=lr,
                      beta1=b1, beta2=b2, eps=eps)
        assert float(p[0]) == pytest.approx(ph, abs=1e-12)

    def test_clip_global_norm(self):
        a = np.array([3.0, 0.0])
        b = np.array([0.0, 4.0])
        norm = clip_global_norm([a, b], 1.0)
        assert norm == pytest.approx(5.0)
        assert math.sqrt(float(np.sum(a * a) + np.sum(b * b))) == pytest.approx(1.0)


class TestCollectRollout:
    def test_buffer_size_800(self, kernels_backend):
        actor, critic, envs, log_stds = make_setup(backend=kernels_backend, n_envs=8)
        buf = collect_rollout(envs[0], actor, critic, log_stds[0], 0, 2,
                              np.random.default_rng(0))
        assert buf.n_transitions == 800
        assert buf.n_episodes == 16
        assert buf.obs.shape == (16, 50, OBS_DIM)
        assert buf.fingertips.shape == (16, 51, 2)

    def test_deterministic_given_seed_and_params(self):
        results = []
        for _ in range(2):
            actor, critic, envs, log_stds = make_setup(seed=4, n_envs=2)
            buf = collect_rollout(envs[0], actor, critic, log_stds[0], 0, 1,
                                  np.random.default_rng(9))
            results.append(buf)
        np.testing.assert_array_equal(results[0].actions, results[1].actions)
        np.testing.assert_array_equal(results[0].raw_rewards, results[1].raw_rewards)
        np.testing.assert_array_equal(results[0].log_probs, results[1].log_probs)

    def test_log_probs_self_consistent(self, kernels_backend):
        actor, critic, envs, log_stds = make_setup(backend=kernels_backend, n_envs=4)
        buf = collect_rollout(envs[1], actor, critic, log_stds[1], 1, 1,
                              np.random.default_rng(3))
        obs = np.ascontiguousarray(buf.obs.reshape(buf.n_transitions, -1))
        outs, _ = forward_batch(actor, obs, 1)
        ls, _ = clamp_log_std(log_stds[1])
        recomputed = gaussian_log_prob(
            outs[1], ls, buf.actions.reshape(buf.n_transitions, -1))
        np.testing.assert_allclose(
            recomputed, buf.log_probs.reshape(-1), atol=1e-10)

    def test_normalized_rewards_within_bounds(self):
        actor, critic, envs, log_stds = make_setup(n_envs=4)
        norm = RewardNormalizer(0.99, 4)
        buf = collect_rollout(envs[0], actor, critic, log_stds[0], 0, 2,
                              np.random.default_rng(1), normalizer=norm)
        assert np.all(np.abs(buf.norm_rewards) <= 10.0)
        assert buf.raw_rewards.min() < buf.norm_rewards.min() or True
        # Raw rewards are kept untouched alongside.
        assert not np.array_equal(buf.raw_rewards, buf.norm_rewards)

    def test_mean_actions_when_not_sampling(self):
        actor, critic, envs, log_stds = make_setup(n_envs=2)
        buf = collect_rollout(envs[0], actor, None, log_stds[0], 0, 1,
                              np.random.default_rng(2), sample=False)
        obs = np.ascontiguousarray(buf.obs.reshape(buf.n_transitions, -1))
        outs, _ = forward_batch(actor, obs, 0)
        np.testing.assert_allclose(
            buf.actions.reshape(buf.n_transitions, -1), outs[0], atol=1e-12)


class TestPpoUpdate:
    def run_one_update(self, kernels_backend, cfg=None, task=0, seed=0):
        cfg = cfg or PpoConfig()
        actor, critic, envs, log_stds = make_setup(backend=kernels_backend,
                                                   seed=seed, n_envs=4)
        set_trainable_module(actor, task)
        set_trainable_module(critic, task)
        buf = collect_rollout(envs[task], actor, critic, log_stds[task], task, 1,
                              np.random.default_rng(seed + 5))
        add_gae(buf, cfg.gamma, cfg.gae_lambda)
        stats = ppo_update(actor, critic, log_stds[task], task, buf, cfg,
                           AdamState(), AdamState(), np.random.default_rng(seed + 6))
        return actor, critic, stats

    def test_ratio_one_identity(self, kernels_backend):
        # First minibatch of the first epoch with minibatch = batch: the old
        # and new policies coincide, so the clipped surrogate is the mean of
        # the normalized advantages, i.e. zero.
        cfg = PpoConfig(epochs=1, minibatch_size=10_000)
        _, _, stats = self.run_one_update(kernels_backend, cfg)
        assert abs(stats.policy_loss) < 1e-8
        assert stats.n_minibatches == 1

    def test_non_active_modules_bit_identical(self, kernels_backend):
        actor, critic, envs, log_stds = make_setup(backend=kernels_backend, n_envs=4)
        set_trainable_module(actor, 0)
        set_trainable_module(critic, 0)
        before_a = json.dumps(net_to_doc(actor)["modules"][1])
        before_c = json.dumps(net_to_doc(critic)["modules"][1])
        buf = collect_rollout(envs[0], actor, critic, log_stds[0], 0, 1,
                              np.random.default_rng(5))
        add_gae(buf, 0.99, 0.95)
        ppo_update(actor, critic, log_stds[0], 0, buf, PpoConfig(epochs=2),
                   AdamState(), AdamState(), np.random.default_rng(6))
        assert json.dumps(net_to_doc(actor)["modules"][1]) == before_a
        assert json.dumps(net_to_doc(critic)["modules"][1]) == before_c
        # The active module must actually have changed.
        after_active = json.dumps(net_to_doc(actor)["modules"][0])
        fresh_actor, *_ = make_setup(backend=kernels_backend, n_envs=4)
        assert after_active != json.dumps(net_to_doc(fresh_actor)["modules"][0])

    def test_laterals_frozen_when_disabled(self, kernels_backend):
        actor, critic, envs, log_stds = make_setup(backend=kernels_backend, n_envs=4)
        set_trainable_module(actor, 0)
        set_trainable_module(critic, 0)
        lat_before = actor.modules[0].lateral_w[1][1].copy()
        buf = collect_rollout(envs[0], actor, critic, log_stds[0], 0, 1,
                              np.random.default_rng(5))
        add_gae(buf, 0.99, 0.95)
        ppo_update(actor, critic, log_stds[0], 0, buf, PpoConfig(epochs=1),
                   AdamState(), AdamState(), np.random.default_rng(6),
                   train_laterals=False)
        np.testing.assert_array_equal(actor.modules[0].lateral_w[1][1], lat_before)

    def test_freeze_preconditions_enforced(self, kernels_backend):
        actor, critic, envs, log_stds = make_setup(backend=kernels_backend, n_envs=2)
        set_trainable_module(actor, None)  # everything frozen
        set_trainable_module(critic, 0)
        buf = collect_rollout(envs[0], actor, critic, log_stds[0], 0, 1,
                              np.random.default_rng(5))
        add_gae(buf, 0.99, 0.95)
        with pytest.raises(ValueError, match="frozen"):
            ppo_update(actor, critic, log_stds[0], 0, buf, PpoConfig(),
                       AdamState(), AdamState(), np.random.default_rng(6))

    def test_non_finite_loss_aborts(self, kernels_backend):
        actor, critic, envs, log_stds = make_setup(backend=kernels_backend, n_envs=2)
        set_trainable_module(actor, 0)
        set_trainable_module(critic, 0)
        buf = collect_rollout(envs[0], actor, critic, log_stds[0], 0, 1,
                              np.random.default_rng(5))
        add_gae(buf, 0.99, 0.95)
        buf.advantages[0, 0] = np.inf
        with pytest.raises(TrainingDiverged, match="non-finite"):
            ppo_update(actor, critic, log_stds[0], 0, buf,
                       PpoConfig(advantage_norm=False), AdamState(), AdamState(),
                       np.random.default_rng(6))


def test_bandit_policy_gradient_sanity():
    final_mean = run_bandit(seed=0, iterations=200)
    assert abs(final_mean) < 0.2

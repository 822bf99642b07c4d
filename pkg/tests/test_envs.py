import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evalrl.envs import (
    CartPole,
    GridWorld,
    GridWorldSpec,
    format_gridworld,
    make_env,
    parse_gridworld,
    tabularize,
)


def cartpole_oracle(state, action):
    """Cart-pole equations of motion with literal constants, explicit Euler at 0.02 s."""
    x, dx, th, dth = state
    g, mc, mp, half_len, dt = 9.8, 1.0, 0.1, 0.5, 0.02
    f = 10.0 * (2 * action - 1)
    m = mc + mp
    s, c = math.sin(th), math.cos(th)
    ddth = (g * s - c * (f + mp * half_len * dth * dth * s) / m) / (half_len * (4.0 / 3.0 - mp * c * c / m))
    ddx = (f + mp * half_len * dth * dth * s) / m - mp * half_len * ddth * c / m
    new = (x + dt * dx, dx + dt * ddx, th + dt * dth, dth + dt * ddth)
    done = abs(new[0]) > 2.4 or abs(new[2]) > 12 * 2 * math.pi / 360
    return new, done


class TestCartPole:
    def test_matches_independent_integrator(self):
        rng = np.random.default_rng(5)
        for episode in range(10):
            env = CartPole(seed=episode)
            obs = env.reset()
            state = tuple(obs)
            for _ in range(500):
                a = int(rng.integers(2))
                res = env.step(a)
                state, done = cartpole_oracle(state, a)
                assert np.max(np.abs(res.observation - state)) <= 1e-12
                assert res.terminated == done
                if res.terminated or res.truncated:
                    break

    def test_rewards_are_shifted(self):
        env = CartPole(seed=0)
        env.reset()
        res = env.step(0)
        assert res.reward == 0.0
        assert env.spec.reward_offset == 1.0 and env.spec.terminal_value == 0.0

    def test_time_limit_truncates(self):
        env = CartPole(seed=0, max_episode_steps=3)
        env.reset()
        results = [env.step(i % 2) for i in range(3)]
        assert results[-1].truncated and not results[-1].terminated
        with pytest.raises(RuntimeError):
            env.step(0)

    def test_set_time_limit(self):
        env = CartPole(seed=0).set_time_limit(10_000)
        assert env.spec.max_episode_steps == 10_000

    def test_reset_is_seeded(self):
        assert np.array_equal(CartPole(seed=3).reset(), CartPole(seed=3).reset())
        assert np.all(np.abs(CartPole(seed=3).reset()) <= 0.05)

    def test_invalid_action(self):
        env = CartPole(seed=0)
        env.reset()
        with pytest.raises(ValueError):
            env.step(2)


class TestOtherClassics:
    @pytest.mark.parametrize("name,obs_dim,actions", [("Acrobot-v1", 6, 3), ("MountainCar-v0", 2, 3)])
    def test_shapes_and_rewards(self, name, obs_dim, actions):
        env = make_env(name, seed=0)
        obs = env.reset()
        assert obs.shape == (obs_dim,) and env.spec.num_actions == actions
        res = env.step(0)
        assert res.reward <= 0 and res.observation.shape == (obs_dim,)

    def test_mountaincar_energy_pumping_reaches_goal(self):
        env = make_env("MountainCar-v0", seed=0)
        obs = env.reset()
        for _ in range(200):
            res = env.step(2 if obs[1] >= 0 else 0)
            obs = res.observation
            if res.terminated:
                break
        assert res.terminated and obs[0] >= 0.5

    def test_acrobot_bounded_velocities(self):
        env = make_env("Acrobot-v1", seed=1)
        env.reset()
        for i in range(200):
            res = env.step(2 * (i // 5 % 2))
            assert abs(res.observation[4]) <= 4 * math.pi and abs(res.observation[5]) <= 9 * math.pi
            assert np.allclose(res.observation[0] ** 2 + res.observation[1] ** 2, 1.0)
            if res.terminated or res.truncated:
                break

    def test_unknown_environment(self):
        with pytest.raises(ValueError, match="unknown environment"):
            make_env("Pong")


class TestGridWorld:
    def test_text_round_trip(self, grid_spec):
        assert parse_gridworld(format_gridworld(grid_spec)) == grid_spec

    def test_parse_rejects_short(self):
        with pytest.raises(ValueError, match="expected"):
            parse_gridworld("4 4 0 0")

    @pytest.mark.parametrize("kwargs", [dict(start=(0, 0), goal=(0, 0)), dict(start=(5, 0), goal=(1, 1)),
                                        dict(start=(0, 0), goal=(1, 1), step_reward=1.0)])
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            GridWorldSpec(4, 4, **kwargs)

    def test_wall_clamping_and_goal_reset(self, grid_mdp, grid_spec):
        mdp, _ = grid_mdp
        start, goal = grid_spec.cell(0, 0), grid_spec.cell(3, 3)
        assert mdp.next_state[start, 0] == start and mdp.next_state[start, 3] == start
        assert mdp.next_state[start, 1] == grid_spec.cell(1, 0)
        assert np.all(mdp.next_state[goal] == start) and np.all(mdp.reward[goal] == 0.0)
        assert mdp.reward[start, 1] == -0.5

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=60))
    def test_env_agrees_with_tabular_model(self, actions):
        spec = GridWorldSpec(4, 4, (0, 0), (3, 3), -0.5)
        mdp, _ = tabularize(spec)
        env = GridWorld(spec, seed=0, max_episode_steps=1000)
        obs = env.reset()
        for a in actions:
            s = int(np.argmax(obs))
            res = env.step(a)
            assert int(np.argmax(res.observation)) == mdp.next_state[s, a]
            assert res.reward == mdp.reward[s, a]
            obs = res.observation

    def test_absorbing_goal_not_tabularized(self):
        with pytest.raises(ValueError, match="reducible"):
            tabularize(GridWorldSpec(3, 3, (0, 0), (2, 2), goal_behavior="absorb"))

    def test_make_env_needs_spec(self):
        with pytest.raises(ValueError, match="GridWorldSpec"):
            make_env("GridWorld")

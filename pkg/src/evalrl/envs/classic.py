"""CartPole, Acrobot and MountainCar with the canonical deterministic dynamics."""

from __future__ import annotations

import math

import numpy as np

from . import constants as C
from .base import Env, EnvSpec


class CartPole(Env):
    """Native reward +1 per step, shifted to 0; falling is a failure (``terminal_value = 0``)."""

    def __init__(self, seed: int | None = None, max_episode_steps: int = C.CARTPOLE_MAX_STEPS):
        super().__init__(EnvSpec("CartPole-v1", 4, 2, max_episode_steps, reward_offset=1.0, terminal_value=0.0), seed)
        self.state = (0.0, 0.0, 0.0, 0.0)

    def _reset(self, rng):
        self.state = tuple(float(x) for x in rng.uniform(-C.CARTPOLE_RESET_HIGH, C.CARTPOLE_RESET_HIGH, 4))
        return np.array(self.state)

    def _step(self, action):
        x, x_dot, theta, theta_dot = self.state
        force = C.CARTPOLE_FORCE_MAG if action == 1 else -C.CARTPOLE_FORCE_MAG
        costheta = math.cos(theta)
        sintheta = math.sin(theta)
        temp = (force + C.CARTPOLE_POLEMASS_LENGTH * theta_dot**2 * sintheta) / C.CARTPOLE_TOTAL_MASS
        thetaacc = (C.CARTPOLE_GRAVITY * sintheta - costheta * temp) / (
            C.CARTPOLE_LENGTH * (4.0 / 3.0 - C.CARTPOLE_MASSPOLE * costheta**2 / C.CARTPOLE_TOTAL_MASS)
        )
        xacc = temp - C.CARTPOLE_POLEMASS_LENGTH * thetaacc * costheta / C.CARTPOLE_TOTAL_MASS
        x = x + C.CARTPOLE_TAU * x_dot
        x_dot = x_dot + C.CARTPOLE_TAU * xacc
        theta = theta + C.CARTPOLE_TAU * theta_dot
        theta_dot = theta_dot + C.CARTPOLE_TAU * thetaacc
        self.state = (x, x_dot, theta, theta_dot)
        terminated = (
            x < -C.CARTPOLE_X_THRESHOLD
            or x > C.CARTPOLE_X_THRESHOLD
            or theta < -C.CARTPOLE_THETA_THRESHOLD
            or theta > C.CARTPOLE_THETA_THRESHOLD
        )
        return np.array(self.state), 1.0, terminated


def _wrap(x, lo, hi):
    diff = hi - lo
    while x > hi:
        x -= diff
    while x < lo:
        x += diff
    return x


def _acrobot_dsdt(s, torque):
    m1, m2 = C.ACROBOT_LINK_MASS_1, C.ACROBOT_LINK_MASS_2
    l1 = C.ACROBOT_LINK_LENGTH_1
    lc1, lc2 = C.ACROBOT_LINK_COM_POS_1, C.ACROBOT_LINK_COM_POS_2
    i1 = i2 = C.ACROBOT_LINK_MOI
    g = C.ACROBOT_GRAVITY
    theta1, theta2, dtheta1, dtheta2 = s
    d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2)) + i1 + i2
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + i2
    phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2.0)
    phi1 = (
        -m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
        - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
        + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
        + phi2
    )
    ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2) - phi2) / (
        m2 * lc2**2 + i2 - d2**2 / d1
    )
    ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
    return (dtheta1, dtheta2, ddtheta1, ddtheta2)


def _rk4(s, torque, dt):
    k1 = _acrobot_dsdt(s, torque)
    k2 = _acrobot_dsdt(tuple(x + dt / 2 * k for x, k in zip(s, k1)), torque)
    k3 = _acrobot_dsdt(tuple(x + dt / 2 * k for x, k in zip(s, k2)), torque)
    k4 = _acrobot_dsdt(tuple(x + dt * k for x, k in zip(s, k3)), torque)
    return tuple(x + dt / 6.0 * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(s, k1, k2, k3, k4))


class Acrobot(Env):
    """Native reward -1 per step and 0 on reaching the goal height (``terminal_value = 1``)."""

    def __init__(self, seed: int | None = None, max_episode_steps: int = C.ACROBOT_MAX_STEPS):
        super().__init__(EnvSpec("Acrobot-v1", 6, 3, max_episode_steps), seed)
        self.state = (0.0, 0.0, 0.0, 0.0)

    def _obs(self):
        t1, t2, d1, d2 = self.state
        return np.array([math.cos(t1), math.sin(t1), math.cos(t2), math.sin(t2), d1, d2])

    def _reset(self, rng):
        self.state = tuple(float(x) for x in rng.uniform(-C.ACROBOT_RESET_HIGH, C.ACROBOT_RESET_HIGH, 4))
        return self._obs()

    def _step(self, action):
        t1, t2, d1, d2 = _rk4(self.state, C.ACROBOT_TORQUES[action], C.ACROBOT_DT)
        t1 = _wrap(t1, -math.pi, math.pi)
        t2 = _wrap(t2, -math.pi, math.pi)
        d1 = min(max(d1, -C.ACROBOT_MAX_VEL_1), C.ACROBOT_MAX_VEL_1)
        d2 = min(max(d2, -C.ACROBOT_MAX_VEL_2), C.ACROBOT_MAX_VEL_2)
        self.state = (t1, t2, d1, d2)
        terminated = -math.cos(t1) - math.cos(t2 + t1) > 1.0
        return self._obs(), (0.0 if terminated else -1.0), terminated


class MountainCar(Env):
    """Native reward -1 per step; reaching the flag ends the episode (``terminal_value = 1``)."""

    def __init__(self, seed: int | None = None, max_episode_steps: int = C.MOUNTAINCAR_MAX_STEPS):
        super().__init__(EnvSpec("MountainCar-v0", 2, 3, max_episode_steps), seed)
        self.state = (0.0, 0.0)

    def _reset(self, rng):
        self.state = (float(rng.uniform(C.MOUNTAINCAR_RESET_LOW, C.MOUNTAINCAR_RESET_HIGH)), 0.0)
        return np.array(self.state)

    def _step(self, action):
        position, velocity = self.state
        velocity += (action - 1) * C.MOUNTAINCAR_FORCE + math.cos(3 * position) * (-C.MOUNTAINCAR_GRAVITY)
        velocity = min(max(velocity, -C.MOUNTAINCAR_MAX_SPEED), C.MOUNTAINCAR_MAX_SPEED)
        position += velocity
        position = min(max(position, C.MOUNTAINCAR_MIN_POSITION), C.MOUNTAINCAR_MAX_POSITION)
        if position == C.MOUNTAINCAR_MIN_POSITION and velocity < 0:
            velocity = 0.0
        self.state = (position, velocity)
        terminated = position >= C.MOUNTAINCAR_GOAL_POSITION and velocity >= C.MOUNTAINCAR_GOAL_VELOCITY
        return np.array(self.state), -1.0, terminated

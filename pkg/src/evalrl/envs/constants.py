"""Physical constants of the classic-control benchmarks.

Values follow the published Gymnasium environment definitions
(``gymnasium/envs/classic_control``): CartPole-v1, Acrobot-v1 and
MountainCar-v0.
"""

import math

# CartPole-v1 (Barto, Sutton & Anderson 1983 cart-pole; gymnasium cartpole.py)
CARTPOLE_GRAVITY = 9.8
CARTPOLE_MASSCART = 1.0
CARTPOLE_MASSPOLE = 0.1
CARTPOLE_TOTAL_MASS = CARTPOLE_MASSPOLE + CARTPOLE_MASSCART
CARTPOLE_LENGTH = 0.5  # half the pole length
CARTPOLE_POLEMASS_LENGTH = CARTPOLE_MASSPOLE * CARTPOLE_LENGTH
CARTPOLE_FORCE_MAG = 10.0
CARTPOLE_TAU = 0.02  # seconds between state updates, explicit Euler
CARTPOLE_THETA_THRESHOLD = 12 * 2 * math.pi / 360
CARTPOLE_X_THRESHOLD = 2.4
CARTPOLE_RESET_HIGH = 0.05
CARTPOLE_MAX_STEPS = 500

# Acrobot-v1 (Sutton & Barto "book" dynamics; gymnasium acrobot.py)
ACROBOT_DT = 0.2
ACROBOT_LINK_LENGTH_1 = 1.0
ACROBOT_LINK_LENGTH_2 = 1.0
ACROBOT_LINK_MASS_1 = 1.0
ACROBOT_LINK_MASS_2 = 1.0
ACROBOT_LINK_COM_POS_1 = 0.5
ACROBOT_LINK_COM_POS_2 = 0.5
ACROBOT_LINK_MOI = 1.0
ACROBOT_MAX_VEL_1 = 4 * math.pi
ACROBOT_MAX_VEL_2 = 9 * math.pi
ACROBOT_TORQUES = (-1.0, 0.0, 1.0)
ACROBOT_GRAVITY = 9.8
ACROBOT_RESET_HIGH = 0.1
ACROBOT_MAX_STEPS = 500

# MountainCar-v0 (Moore 1990; gymnasium mountain_car.py)
MOUNTAINCAR_MIN_POSITION = -1.2
MOUNTAINCAR_MAX_POSITION = 0.6
MOUNTAINCAR_MAX_SPEED = 0.07
MOUNTAINCAR_GOAL_POSITION = 0.5
MOUNTAINCAR_GOAL_VELOCITY = 0.0
MOUNTAINCAR_FORCE = 0.001
MOUNTAINCAR_GRAVITY = 0.0025
MOUNTAINCAR_RESET_LOW = -0.6
MOUNTAINCAR_RESET_HIGH = -0.4
MOUNTAINCAR_MAX_STEPS = 200

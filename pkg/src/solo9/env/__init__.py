"""Decision-process wrapper around the simulator."""

from .config import (ActionConfig, ConfigError, CurriculumConfig, EnvConfig, RandomizationRanges,
                     RewardWeights, SimConfig, TerminationConfig, apply_overrides, load_config)
from .core import QuadrupedEnv, apply_action, build_observations, check_termination, obs_dims
from .randomization import CurriculumState, RandomizationError, curriculum_update, randomize_env
from .rewards import (reward_angvel, reward_clearance, reward_slip, reward_smooth, task_reward,
                      total_reward)

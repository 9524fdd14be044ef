"""Multi-preference actor-critic: A2C with Lagrangian preference constraints, in numpy."""

from .diffnet import ParamSet, apply_step, backward, forward, init_mlp, make_optimizer
from .envs import Chain, Pendulum, make_env
from .errors import ConfigError, DemoParseError, InvalidArgument, InvalidState, MpacError
from .harness import RunConfig, Trainer, evaluate, parse_config, train
from .lagrange import LagrangeState, lambda_step, mpac_loss
from .policy import ActorCritic, Categorical, FrozenPolicy, make_actor_critic
from .preferences import PreferenceSpec, polyak_update
from .rollout import RolloutBatch, a2c_loss, collect, compute_returns
from .demos import DemonstrationSet, behavior_clone, record

__version__ = "0.1.0"

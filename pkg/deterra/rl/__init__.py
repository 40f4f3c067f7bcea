from .baselines import LyapunovScheduler, behavior_policy_uniform, evaluate_lyapunov, lyapunov_baseline
from .buffer import GaeResult, RolloutBuffer, gae
from .contract import Cmdp, StateCmdp, Transition
from .loop import CurvePoint, TrainResult, evaluate_policy, train_loop
from .policy import ActorCritic, act, build_actor_critic, load_policy, save_policy
from .ppo import DualState, PpoLearner, clipped_surrogate, dual_update, ppo_update
from .toy import ToyCmdp, best_constrained, enumerate_policies

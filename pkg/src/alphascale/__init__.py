"""Offline actor-critic training with a meta-learned RL/BC constraint scale."""

from .bounds import (BoundReport, LipschitzCritic, TaylorCheck, prop1_bounds,
                     run_theory_probes, single_step_bound, supnorm_lemma_check,
                     taylor_l3_check)
from .data import (OfflineDataset, Transition, TransitionBatch, generate_dataset,
                   load_dataset, make_dataset, sample_batch, save_dataset)
from .envs import (BehaviorPolicySpec, EnvSpec, ScoreScale, behavior_action,
                   compute_score_scale, controller_action, env_reset, env_step,
                   make_env)
from .harness import (MetricRow, RunArtifact, RunConfig, actor_policy, emit_curves,
                      evaluate_policy, load_artifact, run_training, save_artifact)
from .meta import (AlphaSchedule, AlphaState, LossMask, OuterLossBreakdown,
                   alpha_meta_step, alpha_schedule_value, ema_update, outer_losses)
from .nets import (ForwardCache, MlpSpec, finite_diff_grad, init_params,
                    layernorm_backward, layernorm_forward, mlp_backward, mlp_forward)
from .params import AdamState, Layout, ParamVector, adam_step, soft_update
from .suites import ArmResult, ProfileRow, run_ablation_suite, time_profile
from .td3bc import (ActorState, CriticPair, InnerGradients, InnerStepResult,
                    critic_update, inner_gradient_decomposed, inner_update,
                    make_actor, make_critics)

__version__ = "0.1.0"

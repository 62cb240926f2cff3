"""Span-routed self-distillation lab for verifiable-reward RL.

Tabular softmax policies, forward/reverse KL with exact logit gradients,
group-relative advantages with the dead-zone convention, privileged-
exposure accounting, executable theory checks, and synthetic tasks that
reproduce the regime-dependent choice between the two KL directions.
"""

from .divergence import (
    LogRatioStats,
    clip_per_vocab_kl,
    fkl_logit_grad,
    kl,
    log_ratio_stats,
    mixed_beta_grad,
    rkl_logit_grad,
)
from .grpo import ClipConfig, RolloutGroup, group_advantages, grpo_token_loss
from .metrics import LiftSample, credit_concentration, delta_lift, ema
from .policy import PolicyTable, entropy, softmax, truncate_and_floor
from .privileged import (
    ContextSet,
    ExposureLedger,
    RlsdWeight,
    exposure_accumulate,
    privileged_deviation,
    privileged_variance,
    rlsd_weight,
)
from .routing import (
    CharSpan,
    RoutingConfig,
    SpanPartition,
    enforce_coverage_cap,
    lambda_schedule,
    partition,
    project_spans_to_mask,
    rho,
    routed_step_loss,
    schedule_weight_sums,
)
from .runner import RunConfig, RunLog, init_run, run_experiment, should_sync, train_step
from .tasks import (
    OracleAnnotation,
    PrivilegedContext,
    SynthTask,
    TaskParams,
    generate_task,
    oracle_annotate,
    oracle_reward_gradient,
    sample_rollout,
)
from .theory import (
    AlignmentParams,
    CornerInstance,
    UtilityParams,
    alignment_lower_bound,
    corner_thresholds,
    corner_utility,
    natural_gradient_flow,
    risk_penalized_utility,
    score_operator_check,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

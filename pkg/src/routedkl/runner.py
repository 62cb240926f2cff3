"""Experiment orchestration: the mini-batch training loop and baselines.

One step samples a group of rollouts, verifies and annotates them, routes
the loss per the configured method, and applies a single gradient step to
the shared policy table. Methods:

* ``routed_fkl_key``     forward KL on key spans (default corner action)
* ``routed_rkl_error``   reverse KL on error spans
* ``routed_both``        both span branches active
* ``grpo_only``          no distillation channel
* ``alltoken_kl_persistent``  mask of all ones, constant KL weight, both
  branches, frozen teacher: the persistent all-token baseline
* ``rlsd_weighted``      GRPO with the teacher/student probability ratio
  damping positive advantages while the KL window is open

Runs are deterministic given (config, seed): sampling, annotation, and
evaluation each draw from their own spawned generator so methods sharing
a seed see identical rollout streams until their parameters diverge.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InternalConsistencyError, NumericFailureError
from .grpo import ClipConfig, group_advantages, grpo_token_loss
from .metrics import LiftSample, credit_concentration, delta_lift
from .policy import PolicyTable, entropy
from .privileged import (
    ExposureLedger,
    context_variance,
    expected_deviation_sq,
    exposure_accumulate,
    rlsd_weight,
)
from .routing import (
    RolloutLossInput,
    RoutedLossReport,
    RoutingConfig,
    enforce_coverage_cap,
    lambda_schedule,
    partition,
    project_spans_to_mask,
    routed_step_loss,
)
from .tasks import (
    REGIMES,
    Rollout,
    SynthTask,
    TaskParams,
    generate_task,
    oracle_annotate,
    sample_rollout,
)

METHODS = (
    "routed_fkl_key",
    "routed_rkl_error",
    "routed_both",
    "grpo_only",
    "alltoken_kl_persistent",
    "rlsd_weighted",
)

ROUTED_FAMILY = ("routed_fkl_key", "routed_rkl_error", "routed_both")

CSV_COLUMNS = (
    "step",
    "train_reward",
    "validation_reward",
    "entropy",
    "lambda",
    "rho",
    "exposure",
    "delta_lift",
    "response_length",
)


@dataclass(frozen=True)
class RunConfig:
    method: str = "routed_fkl_key"
    regime: str = "under_allocated"
    seed: int = 0
    steps: int = 200
    group_size: int = 8
    learning_rate: float = 0.1
    routing: RoutingConfig = RoutingConfig()
    clip: ClipConfig = ClipConfig()
    task_params: TaskParams | None = None
    task_seed: int | None = None  # defaults to seed
    annotator_precision: float = 1.0
    teacher_sync: str = "interval"  # "interval" | "frozen"
    rlsd_eps_w: float = 0.2
    out_dir: str | None = None
    emit_plot_data: bool = False

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.group_size < 2:
            raise ConfigError("group size must be >= 2")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.teacher_sync not in ("interval", "frozen"):
            raise ConfigError("teacher_sync must be 'interval' or 'frozen'")
        if not (0.0 <= self.annotator_precision <= 1.0):
            raise ConfigError("annotator precision must lie in [0, 1]")

    def config_hash(self) -> str:
        """Hash of the run-defining fields; output plumbing excluded."""
        payload = dataclasses.asdict(self)
        payload.pop("out_dir", None)
        payload.pop("emit_plot_data", None)
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            cells = []
            for col in CSV_COLUMNS:
                value = row[col]
                if isinstance(value, float):
                    cells.append(repr(float(value)))
                elif value is None:
                    cells.append("")
                else:
                    cells.append(str(value))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_long_csv(self) -> str:
        lines = ["step,series,value"]
        for row in self.rows:
            for col in CSV_COLUMNS[1:]:
                value = row[col]
                if value is None:
                    continue
                cell = repr(float(value)) if isinstance(value, float) else str(value)
                lines.append(f"{row['step']},{col},{cell}")
        return "\n".join(lines) + "\n"


@dataclass
class RunState:
    cfg: RunConfig
    task: SynthTask
    table: PolicyTable
    ledger: ExposureLedger
    rng_rollout: np.random.Generator
    rng_annot: np.random.Generator
    eval_tokens: list
    k: int = 0
    credit_ratios: list = field(default_factory=list)

    def fork(self) -> "RunState":
        """Deep snapshot so two methods can be advanced from one state."""
        return copy.deepcopy(self)


def should_sync(k: int, n: int, lam_k: float) -> bool:
    """Sync the teacher every n steps, but only while the channel is open."""
    if k < 0 or n <= 0:
        raise ConfigError("step and interval must be nonnegative/positive")
    return k % n == 0 and lam_k > 0.0


def effective_lambda(cfg: RunConfig, k: int) -> float:
    if cfg.method == "alltoken_kl_persistent":
        return cfg.routing.w0
    if cfg.method in ROUTED_FAMILY:
        return lambda_schedule(k, cfg.routing)
    return 0.0


def effective_routing(cfg: RunConfig) -> RoutingConfig:
    """Method tag selects exactly one loss assembly."""
    r = cfg.routing
    if cfg.method == "routed_fkl_key":
        return replace(r, mu_e=0, mu_k=1)
    if cfg.method == "routed_rkl_error":
        return replace(r, mu_e=1, mu_k=0)
    if cfg.method == "routed_both":
        return replace(r, mu_e=1, mu_k=1)
    if cfg.method == "alltoken_kl_persistent":
        return replace(r, mu_e=1, mu_k=1, alpha=1.0)
    return r


def _uses_teacher(method: str) -> bool:
    return method != "grpo_only"


def build_eval_token_set(task: SynthTask, table: PolicyTable) -> list:
    """Frozen lift-evaluation set from the pre-training policy snapshot.

    Tokens at the first critical row whose context-mean teacher
    probability exceeds the student's at the snapshot; the
    teacher-supported flag is fixed here, before any update.
    """
    student = table.student_dist(task.prompt_id, ())
    matrix = task.teacher_dist_matrix(table, ())
    mean_teacher = task.context_probs @ matrix
    return [((), v) for v in range(task.vocab) if mean_teacher[v] > student[v]]


def init_run(cfg: RunConfig) -> RunState:
    task_seed = cfg.seed if cfg.task_seed is None else cfg.task_seed
    task = generate_task(cfg.regime, task_seed, cfg.task_params)
    table = task.make_table()
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_rollout = np.random.default_rng(seeds[0])
    rng_annot = np.random.default_rng(seeds[1])
    # Snapshot-policy eval set, built on a scratch table so the run
    # table's teacher-lookup counter reflects training only.
    eval_tokens = build_eval_token_set(task, task.make_table())
    if _uses_teacher(cfg.method):
        table.sync_teacher()  # teacher starts as the step-0 student
    return RunState(
        cfg=cfg,
        task=task,
        table=table,
        ledger=ExposureLedger(c_s=1.0),
        rng_rollout=rng_rollout,
        rng_annot=rng_annot,
        eval_tokens=eval_tokens,
    )


def _eval_logprobs(state: RunState) -> np.ndarray:
    task, table = state.task, state.table
    out = np.empty(len(state.eval_tokens))
    for i, (prefix, v) in enumerate(state.eval_tokens):
        out[i] = np.log(table.student_dist(task.prompt_id, prefix)[v])
    return out


def _fresh_log_ratio(state: RunState, rollout: Rollout) -> tuple[np.ndarray, np.ndarray]:
    """Student dists and log ratios against the sample-time log-probs.

    One optimizer step per batch means the recomputed log-probs equal the
    sample-time ones bit for bit, so the ratio is exactly one.
    """
    task, table = state.task, state.table
    length = len(rollout)
    dists = np.empty((length, task.vocab))
    log_ratio = np.empty(length)
    for t in range(length):
        dist = table.student_dist(task.prompt_id, rollout.prefix(t))
        dists[t] = dist
        log_ratio[t] = np.log(dist[rollout.tokens[t]]) - rollout.logprobs[t]
    return dists, log_ratio


def _grpo_items(state: RunState, rollouts: list) -> list:
    """Loss inputs with empty span masks: plain GRPO on every token."""
    items = []
    for rollout in rollouts:
        dists, log_ratio = _fresh_log_ratio(state, rollout)
        part = partition(len(rollout), np.zeros(len(rollout), dtype=np.int8), rollout.outcome)
        items.append(
            RolloutLossInput(
                student=dists,
                log_ratio=log_ratio,
                sampled=np.asarray(rollout.tokens),
                part=part,
                teacher=None,
            )
        )
    return items


def _routed_items(
    state: RunState, rollouts: list, routing: RoutingConfig
) -> tuple[list, list]:
    """Annotate, mask, cap, partition, and gather teacher rows per rollout."""
    cfg, task, table = state.cfg, state.task, state.table
    items, annotations = [], []
    for rollout in rollouts:
        dists, log_ratio = _fresh_log_ratio(state, rollout)
        if cfg.method == "alltoken_kl_persistent":
            ann = oracle_annotate(rollout, task, 1.0, state.rng_annot)
            mask = np.ones(len(rollout), dtype=np.int8)
        else:
            ann = oracle_annotate(
                rollout, task, cfg.annotator_precision, state.rng_annot
            )
            mask = project_spans_to_mask(list(ann.spans), rollout.token_char_intervals())
            mask = enforce_coverage_cap(mask, np.ones(len(rollout)), routing.alpha)
        part = partition(len(rollout), mask, rollout.outcome)
        teacher: dict = {}
        mu_for = {True: routing.mu_e, False: routing.mu_k}
        for t in part.span_idx:
            if mu_for[t in part.error_idx]:
                teacher[t] = task.teacher_dist(table, ann.context_index, rollout.prefix(t))
        items.append(
            RolloutLossInput(
                student=dists,
                log_ratio=log_ratio,
                sampled=np.asarray(rollout.tokens),
                part=part,
                teacher=teacher,
            )
        )
        annotations.append(ann)
    return items, annotations


def _rlsd_grads(state: RunState, rollouts: list, advantages: np.ndarray, active: bool):
    """GRPO with the per-token probability-ratio damping on positive advantages."""
    cfg, task, table = state.cfg, state.task, state.table
    g = len(rollouts)
    grads: dict = {}
    total = 0.0
    entropies = []
    for i, rollout in enumerate(rollouts):
        dists, log_ratio = _fresh_log_ratio(state, rollout)
        ctx = int(state.rng_annot.choice(len(task.contexts), p=task.context_probs)) if active else 0
        adv = float(advantages[i])
        inv_len = 1.0 / len(rollout)
        for t in range(len(rollout)):
            entropies.append(entropy(dists[t]))
            tok_adv = adv
            if active and adv > 0:
                q = task.teacher_dist(table, ctx, rollout.prefix(t))
                w = rlsd_weight(float(q[rollout.tokens[t]]), float(dists[t][rollout.tokens[t]]), cfg.rlsd_eps_w)
                tok_adv = adv * w.clipped
            loss_t, factor = grpo_token_loss(float(log_ratio[t]), tok_adv, cfg.clip)
            total += loss_t * inv_len / g
            if factor != 0.0:
                key = (task.prompt_id, rollout.prefix(t))
                vec = -dists[t] * (factor * inv_len / g)
                vec[rollout.tokens[t]] += factor * inv_len / g
                grads[key] = grads.get(key, 0.0) + vec
    return grads, total, float(np.mean(entropies))


def _accumulate_row_grads(task: SynthTask, rollouts: list, report: RoutedLossReport) -> dict:
    grads: dict = {}
    for (i, t), vec in report.per_token_logit_grads.items():
        key = (task.prompt_id, rollouts[i].prefix(t))
        if key in grads:
            grads[key] = grads[key] + vec
        else:
            grads[key] = vec.copy()
    return grads


def _update_ledger(state: RunState, rollouts: list, items: list, lam: float) -> None:
    """Per-step exposure record: exact context variance and deviation moment."""
    task, table = state.task, state.table
    mv_terms, dev_terms = [], []
    for rollout, item in zip(rollouts, items):
        mask = item.part.mask
        inv_len = 1.0 / len(rollout)
        mv = 0.0
        dev = 0.0
        for t in np.flatnonzero(mask):
            matrix = task.teacher_dist_matrix(table, rollout.prefix(int(t)))
            mv += context_variance(task.context_probs, matrix)
            dev += expected_deviation_sq(task.context_probs, matrix)
        mv_terms.append(mv * inv_len)
        dev_terms.append(dev * inv_len)
    exposure_accumulate(
        state.ledger, state.k, lam, float(np.mean(mv_terms)), float(np.mean(dev_terms))
    )


def _track_credit_concentration(
    state: RunState, items: list, report: RoutedLossReport
) -> None:
    """Per-token update magnitude (L2 logit-gradient norm times step size)
    inside the span mask versus outside, averaged over the batch."""
    ratios = []
    for i, item in enumerate(items):
        length = item.student.shape[0]
        credit = np.zeros(length)
        for t in range(length):
            grad = report.per_token_logit_grads.get((i, t))
            if grad is not None:
                credit[t] = state.cfg.learning_rate * float(np.linalg.norm(grad))
        ratio = credit_concentration(credit, item.part.mask.astype(bool))
        if ratio is not None:
            ratios.append(ratio)
    if ratios:
        state.credit_ratios.append(float(np.mean(ratios)))


def _dump_diagnostics(state: RunState, rewards: np.ndarray, total: float) -> None:
    """Write an abort snapshot next to the run output when possible."""
    if state.cfg.out_dir is None:
        return
    os.makedirs(state.cfg.out_dir, exist_ok=True)
    payload = {
        "step": state.k,
        "method": state.cfg.method,
        "seed": state.cfg.seed,
        "loss": repr(total),
        "batch_rewards": rewards.tolist(),
        "rows": {
            f"{prompt}/{prefix}": row.tolist()
            for (prompt, prefix), row in state.table.rows.items()
        },
    }
    path = os.path.join(state.cfg.out_dir, "abort_diagnostics.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def train_step(state: RunState) -> dict:
    """One mini-batch update; returns the per-step log row."""
    cfg, task, table = state.cfg, state.task, state.table
    k = state.k
    lam = effective_lambda(cfg, k)
    routing = effective_routing(cfg)

    if _uses_teacher(cfg.method) and cfg.teacher_sync == "interval":
        if should_sync(k, routing.sync_n, lam):
            table.sync_teacher()

    rollouts = [sample_rollout(table, task, state.rng_rollout) for _ in range(cfg.group_size)]
    rewards = np.array([r.outcome for r in rollouts], dtype=float)
    advantages = group_advantages(rewards)

    lookups_before = table.teacher_lookups
    rho_k = None
    if cfg.method == "rlsd_weighted":
        active = lambda_schedule(k, cfg.routing) > 0.0
        grads, total, mean_entropy = _rlsd_grads(state, rollouts, advantages, active)
        lam_row = 0.0
    elif cfg.method == "grpo_only" or lam == 0.0:
        items = _grpo_items(state, rollouts)
        report = routed_step_loss(items, advantages, k, routing, cfg.clip, lam_override=0.0)
        if table.teacher_lookups != lookups_before:
            raise InternalConsistencyError(
                "teacher consulted while the KL channel is closed"
            )
        grads = _accumulate_row_grads(task, rollouts, report)
        total = report.total
        rho_k = report.rho
        mean_entropy = float(
            np.mean([entropy(item.student[t]) for item in items for t in range(item.student.shape[0])])
        )
        lam_row = 0.0
    else:
        items, _ = _routed_items(state, rollouts, routing)
        report = routed_step_loss(
            items, advantages, k, routing, cfg.clip, lam_override=lam
        )
        grads = _accumulate_row_grads(task, rollouts, report)
        total = report.total
        rho_k = report.rho
        mean_entropy = float(
            np.mean([entropy(item.student[t]) for item in items for t in range(item.student.shape[0])])
        )
        lam_row = lam
        _update_ledger(state, rollouts, items, lam)
        _track_credit_concentration(state, items, report)

    if not np.isfinite(total):
        _dump_diagnostics(state, rewards, total)
        raise NumericFailureError(f"non-finite loss at step {k}: {total!r}")

    lift_before = _eval_logprobs(state)
    table.apply_gradients(grads, cfg.learning_rate)
    lift_after = _eval_logprobs(state)
    samples = [
        LiftSample(0, v, float(b), float(a), True)
        for ((_, v), b, a) in zip(state.eval_tokens, lift_before, lift_after)
    ]
    lift = delta_lift(samples)

    row = {
        "step": k,
        "train_reward": float(rewards.mean()),
        "validation_reward": float(task.expected_reward(table)),
        "entropy": mean_entropy,
        "lambda": lam_row,
        "rho": rho_k if rho_k is not None else 1.0,
        "exposure": state.ledger.exposure,
        "delta_lift": lift,
        "response_length": float(np.mean([len(r) for r in rollouts])),
    }
    state.k += 1
    return row


def run_experiment(cfg: RunConfig, state: RunState | None = None) -> tuple[RunLog, RunState]:
    """Run the configured training loop; optionally emit CSV artifacts.

    Deterministic given (config, seed): two runs produce byte-identical
    CSV output.
    """
    state = state or init_run(cfg)
    log = RunLog()
    for _ in range(cfg.steps):
        log.rows.append(train_step(state))

    lifts = [row["delta_lift"] for row in log.rows if row["delta_lift"] is not None]
    log.summary = {
        "method": cfg.method,
        "regime": cfg.regime,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "config_hash": cfg.config_hash(),
        "final_validation_reward": log.rows[-1]["validation_reward"],
        "final_train_reward": log.rows[-1]["train_reward"],
        "mean_delta_lift": float(np.mean(lifts)) if lifts else None,
        "mean_credit_concentration": (
            float(np.mean(state.credit_ratios)) if state.credit_ratios else None
        ),
        "credit_norm": "l2",
        "final_exposure": state.ledger.exposure,
        "final_exposure_bound": state.ledger.bound,
        "teacher_syncs": state.table.sync_count,
    }

    if cfg.out_dir is not None:
        os.makedirs(cfg.out_dir, exist_ok=True)
        stem = f"{cfg.method}_{cfg.regime}_seed{cfg.seed}"
        with open(os.path.join(cfg.out_dir, f"{stem}.csv"), "w", newline="") as fh:
            fh.write(log.to_csv())
        with open(os.path.join(cfg.out_dir, f"{stem}_summary.json"), "w") as fh:
            json.dump(log.summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
        if state.ledger.records:
            with open(os.path.join(cfg.out_dir, f"{stem}_ledger.csv"), "w", newline="") as fh:
                fh.write(state.ledger.to_csv())
        if cfg.emit_plot_data:
            with open(os.path.join(cfg.out_dir, f"{stem}_long.csv"), "w", newline="") as fh:
                fh.write(log.to_long_csv())
    return log, state

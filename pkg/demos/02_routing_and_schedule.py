"""Span masks, the coverage cap, the KL weight schedule, and the routed loss."""

import numpy as np

from routedkl import (
    CharSpan,
    RoutingConfig,
    enforce_coverage_cap,
    lambda_schedule,
    partition,
    project_spans_to_mask,
    rho,
    routed_step_loss,
    schedule_weight_sums,
)
from routedkl.grpo import group_advantages
from routedkl.routing import RolloutLossInput

print("== span projection and the coverage cap ==")
intervals = [(t, t + 1) for t in range(12)]
spans = [CharSpan(2, 4, "type_a"), CharSpan(8, 9, "type_a")]
mask = project_spans_to_mask(spans, intervals)
print("projected mask  ->", mask.tolist())
capped = enforce_coverage_cap(mask, np.ones(12), alpha=0.25)
print("after 25% cap   ->", capped.tolist(), f"({capped.sum()} of ceil(0.25*12)={int(np.ceil(3.0))})")

part = partition(12, capped, verifier_outcome=1)
print("outcome 1 routes the mask to key spans:", part.key_idx)
part = partition(12, capped, verifier_outcome=0)
print("outcome 0 routes the mask to error spans:", part.error_idx)

print("\n== decay schedule ==")
cfg = RoutingConfig()  # w0=0.5, flat 10 steps, 30-step ramp
for k in (0, 5, 10, 25, 40, 100):
    lam = lambda_schedule(k, cfg)
    print(f"k={k:3d}  lambda={lam:5.3f}  rho={rho(lam, cfg.w0):5.3f}")
l1, l2 = schedule_weight_sums(cfg)
print(f"sum lambda = {l1}, sum lambda^2 = {l2:.6f}  (finite: exposure stays bounded)")

print("\n== routed loss on a toy group ==")
rng = np.random.default_rng(0)
vocab, length = 6, 4
teacher = rng.dirichlet(np.ones(vocab))
items = []
outcomes = [1, 1, 0]
for outcome in outcomes:
    student = np.stack([rng.dirichlet(np.ones(vocab)) for _ in range(length)])
    m = np.zeros(length, dtype=np.int8)
    m[1] = 1
    p = partition(length, m, outcome)
    items.append(
        RolloutLossInput(
            student=student,
            log_ratio=np.zeros(length),
            sampled=rng.integers(0, vocab, size=length),
            part=p,
            teacher={1: teacher},
        )
    )
adv = group_advantages(np.array(outcomes, dtype=float))
report = routed_step_loss(items, adv, k=0, cfg=RoutingConfig(tau=10.0, alpha=0.5, mu_e=1, mu_k=1))
print("total             ", round(report.total, 6))
print("  grpo nonspan    ", round(report.grpo_nonspan, 6))
print("  rho * grpo span ", round(report.rho * report.grpo_span, 6))
print("  lam * kl error  ", round(report.lam * report.kl_error_branch, 6))
print("  lam * kl key    ", round(report.lam * report.kl_key_branch, 6))
check = (
    report.grpo_nonspan
    + report.rho * report.grpo_span
    + report.lam * (report.kl_error_branch + report.kl_key_branch)
)
print("decomposition gap ", abs(report.total - check))

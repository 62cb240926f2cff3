"""Group-relative advantages, the asymmetric clip, and dead-zone routing."""

import numpy as np

from routedkl import group_advantages, grpo_token_loss
from routedkl.grpo import ClipConfig
from routedkl.routing import RolloutLossInput, RoutingConfig, partition, routed_step_loss

print("== standardized advantages ==")
for rewards in ([1, 1, 1, 1], [1, 0], [1, 1, 0, 0, 0, 0, 0, 0]):
    adv = group_advantages(np.array(rewards, dtype=float))
    print(f"rewards {rewards} -> advantages {np.round(adv, 3).tolist()}")
print("uniform groups are dead zones: every advantage is exactly zero")

print("\n== asymmetric ratio clip ==")
clip = ClipConfig()  # 0.2 low, 0.28 high
for ratio, adv in ((1.0, 1.0), (1.5, 1.0), (0.5, 1.0), (0.5, -1.0)):
    loss, factor = grpo_token_loss(np.log(ratio), adv, clip)
    state = "flows" if factor != 0.0 else "clipped (zero gradient)"
    print(f"ratio {ratio:3.1f}, advantage {adv:+.0f}: loss {loss:+.3f}, gradient {state}")

print("\n== dead-zone signal preservation ==")
rng = np.random.default_rng(1)
vocab, length, group = 6, 4, 4
teacher = rng.dirichlet(np.ones(vocab))
items = []
for _ in range(group):
    student = np.stack([rng.dirichlet(np.ones(vocab)) for _ in range(length)])
    mask = np.zeros(length, dtype=np.int8)
    mask[1] = 1
    items.append(
        RolloutLossInput(
            student=student,
            log_ratio=np.zeros(length),
            sampled=rng.integers(0, vocab, size=length),
            part=partition(length, mask, 1),
            teacher={1: teacher},
        )
    )
adv = group_advantages(np.ones(group))  # all-correct group
cfg = RoutingConfig(tau=10.0, alpha=0.5)

after_decay = routed_step_loss(items, adv, k=100, cfg=cfg)
print("after decay (pure GRPO): touched positions ->", sorted(after_decay.per_token_logit_grads))

active = routed_step_loss(items, adv, k=0, cfg=cfg)
print("KL window open: touched positions         ->", sorted(active.per_token_logit_grads))
print("the routed channel keeps learning from groups GRPO cannot see")

"""Tabular softmax policies and the two KL directions.

Shows the basic simplex plumbing, then the point of routing: the forward
and reverse KL gradients react very differently to under-allocated and
confident-wrong tokens.
"""

import numpy as np

from routedkl import (
    entropy,
    fkl_logit_grad,
    kl,
    rkl_logit_grad,
    softmax,
    truncate_and_floor,
)

print("== softmax and flooring ==")
logits = np.array([np.log(2.0), 0.0])
print("softmax(ln 2, 0)      ->", softmax(logits))
print("shift invariance      ->", softmax(logits + 7.3))

skewed = np.array([0.97, 0.02, 0.01])
floored = truncate_and_floor(skewed, top_k=2, p_min=0.05)
print("truncate+floor        ->", floored, "(support min hits the floor exactly)")

print("entropy(0.9, 0.1)     ->", round(entropy(np.array([0.9, 0.1])), 4), "nats")

print("\n== divergence values and gradients ==")
student = np.array([0.9, 0.1])
teacher = np.array([0.5, 0.5])
print("KL(student||teacher)  ->", round(kl(student, teacher), 4))
print("forward-KL logit grad ->", fkl_logit_grad(student, teacher))
print("reverse-KL logit grad ->", np.round(rkl_logit_grad(student, teacher), 4))

print("\n== regime asymmetry ==")
# Under-allocated token: student 0.4% where the teacher holds 60%.
p = np.array([0.004, 0.796, 0.2])
q = np.array([0.6, 0.2, 0.2])
print("under-allocated token (p=0.004, q=0.6):")
print("  forward entry", round(fkl_logit_grad(p, q)[0], 4), " <- Theta(q), mass independent")
print("  reverse entry", round(rkl_logit_grad(p, q)[0], 4), " <- vanishes with the student mass")

# Confident-wrong token: student 85% where the teacher holds 2%.
p = np.array([0.85, 0.1, 0.05])
q = np.array([0.02, 0.49, 0.49])
print("confident-wrong token (p=0.85, q=0.02):")
print("  reverse entry", round(rkl_logit_grad(p, q)[0], 4), " <- scales with confidence x gap")
print("  forward entry", round(fkl_logit_grad(p, q)[0], 4), " <- only the probability difference")

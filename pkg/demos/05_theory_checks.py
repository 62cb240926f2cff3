"""Executable versions of the analytic results: flows, corners, bounds."""

import numpy as np

from routedkl import (
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
from routedkl.policy import softmax
from routedkl.routing import RoutingConfig
from routedkl.theory import (
    corner_grid_argmax,
    euclidean_fkl_descent_step,
    natural_flow_closed_form,
    precision_threshold,
)

print("== natural-gradient mass flow ==")
p0 = np.array([0.9, 0.1])
pt = np.array([0.5, 0.5])
traj = natural_gradient_flow(p0, pt, dt=1e-3, horizon=np.log(2))
print("Euler at t=ln(2)    :", np.round(traj[-1], 4), "(closed form gives (0.7, 0.3))")
print("closed-form check   :", natural_flow_closed_form(p0, pt, np.log(2)))

print("\n== Euclidean descent is not mass-monotone ==")
logits = np.array([0.0, 1.2, -2.6])
target = np.array([0.05, 0.10, 0.85])
before = softmax(logits)
after = softmax(euclidean_fkl_descent_step(logits, target, eta=1.0))
print(f"|pi(U) - target(U)| before: {abs(before[0] - target[0]):.4f}")
print(f"|pi(U) - target(U)| after : {abs(after[0] - target[0]):.4f}  <- moved away")

print("\n== score-operator identity ==")
a = np.array([0.3, -0.3])
lhs, rhs = score_operator_check(a, np.array([0.6, 0.4]))
print(f"lhs = {lhs}, rhs = {rhs} (equality at C_s = 1)")

print("\n== corner geometry ==")
rng = np.random.default_rng(0)
dim = 4
g_tilde = rng.normal(size=dim)
inst = CornerInstance(
    g0=0.4 * g_tilde + rng.normal(scale=0.1, size=dim),
    g1=1.2 * g_tilde + rng.normal(scale=0.1, size=dim),
    g_null=np.zeros(dim),
    g_tilde=g_tilde,
    kappa=0.3,
    v_t=0.5,
)
print("utilities: beta=0", round(corner_utility(inst, 0.0), 3),
      "| beta=0.5", round(corner_utility(inst, 0.5), 3),
      "| beta=1", round(corner_utility(inst, 1.0), 3),
      "| none", round(corner_utility(inst, None), 3))
print("grid argmax over beta in [0,1] + none:", corner_grid_argmax(inst),
      "(interior mixing never wins)")
k_e, k_k, k_n, nonempty = corner_thresholds(inst, inst, CornerInstance(
    0.01 * g_tilde, 0.01 * g_tilde, np.zeros(dim), g_tilde, 0.3, 0.5))
print(f"thresholds: kappa_E={k_e:.3f}, kappa_K={k_k:.3f}, kappa_N={k_n:.3f}, "
      f"unified interval nonempty: {nonempty}")

print("\n== precision threshold and risk-penalized utility ==")
params = AlignmentParams(lambda_k=0.5, p_k=0.25, q_k=0.9, gamma_k=1.0, b_k=1.0)
print("signal lower bound at q=0.9:", alignment_lower_bound(params))
print("sign flips at q* =", precision_threshold(1.0, 1.0))
cfg = RoutingConfig()
util = UtilityParams.from_schedule(cfg, c_s=1.0, v_bar_k=0.2, kappa=0.1,
                                   p_k=0.25, q_k=0.9, gamma_k=1.0, b_k=1.0)
print(f"schedule sums: L1={util.lambda1}, L2={util.lambda2:.4f}")
print("risk-penalized utility:", round(risk_penalized_utility(util), 4))

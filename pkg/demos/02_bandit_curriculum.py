"""
Boltzmann bandit over tasks
===========================

Three arms with fixed rewards.  The policy is a softmax over exponentially
weighted value estimates, so it settles at softmax(rewards / tau).
"""

import numpy as np

from mtsimplify import bandit as bd

rewards = [0.1, 0.5, 0.9]
state = bd.init(3, q0=0.0, alpha=0.3, tau=1.0)
rng = np.random.default_rng(0)

for t in range(2000):
    probs = bd.policy(state)
    arm = bd.select(state, rng)
    bd.observe(state, arm, rewards[arm])
    bd.trace(state, t + 1, arm, rewards[arm], probs)
    if t in (0, 9, 99, 1999):
        print(f"round {t + 1:4d}  q = {np.round(state.q, 3)}  policy = {np.round(bd.policy(state), 4)}")

# %%
# The stationary policy is exactly softmax of the rewards.
target = np.exp(rewards) / np.exp(rewards).sum()
print("softmax(rewards) =", np.round(target, 4))

# %%
# Smoothed selection frequencies versus the logged policy.
freq = bd.selection_frequencies(state.trace, window=500)[-1]
print("last-500 selection frequencies:", np.round(freq, 3))

# %%
# A trace replays to the same value estimates.
q_replayed = bd.replay(state.trace, 3, 0.0, 0.3)[-1]
print("replay matches:", np.array_equal(q_replayed, state.q))

"""
A2C and one preference on the chain world
=========================================

The chain world is eight cells in a row; reward 1 arrives only in the
rightmost cell.  Plain A2C learns to walk right in a few epochs.  Adding an
entropy preference with threshold 0 asks for a uniform policy instead, and
its multiplier climbs for as long as that request is violated.
"""

from mpac.harness import parse_config, train

small = {"env": "chain-8", "steps_per_epoch": 200, "n_envs": 4, "hidden": [32, 32],
         "policy_lr": 1e-3, "eval_episodes": 5, "epochs": 15}

# Plain A2C: no preferences, so the objective is the usual entropy-regularized loss.
rows = train(parse_config(small)).rows
print("A2C evaluation return per epoch:")
print("  ", [round(r["eval_mean"], 1) for r in rows])

# Same run with an entropy preference at l = 0.  d_entropy is KL(pi || uniform),
# which is positive for every non-uniform policy, so lambda only grows.
cfg = parse_config({**small, "lambda_lr": 0.5,
                    "preferences": [{"kind": "entropy", "threshold": 0.0}]})
rows = train(cfg).rows
print("\nepoch  eval   d_entropy  lambda_entropy")
for r in rows:
    print(f"{r['epoch']:5d} {r['eval_mean']:6.1f} {r['d_entropy']:10.4f} {r['lambda_entropy']:14.4f}")

"""
Learning faster from demonstrations
===================================

The full pipeline behind the demonstration experiment:

1. a scripted energy-pumping controller swings the pendulum up;
2. a 64x64 network is distilled from it and serves as the pre-trained
   demonstrator;
3. 10,000 (observation, action) pairs are recorded from the demonstrator
   with sampled actions;
4. plain A2C and M-PAC with the reference-policy and GAIL preferences are
   trained from the same seed and compared.

M-PAC uses one multiplier step per policy update at step size 4e-3.  With
one step per epoch at 1e-4 the multipliers stay too small within 100
epochs to matter.

Expect a few minutes per seed at full size.  Usage:
``python3 tutorials/04_pendulum_demonstrations.py [epochs] [seed]``.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from mpac import demos
from mpac.envs import Pendulum
from mpac.harness import evaluate, parse_config, train
from mpac.policy import FrozenPolicy

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

# 1-2. scripted controller, then a network distilled from its greedy actions
env = Pendulum()
teacher = demos.record(demos.scripted_policy(env), env, 40_000, seed=123, greedy=True)
print(f"scripted controller: mean return {np.mean(teacher.returns):.1f}")
params = demos.behavior_clone(teacher, [3, 64, 64, 9], epochs=30, lr=1e-3, seed=0)
demonstrator = FrozenPolicy(params, 9)
print(f"demonstrator: mean return {evaluate(demonstrator, env.env_id, 20, seed=1).mean:.1f}")

# 3. the demonstration file
path = Path(tempfile.mkdtemp()) / "pendulum_demos.txt"
data = demos.record(demonstrator, Pendulum(), 10_000, seed=7, generator="distilled swing-up")
demos.save(data, path)
print(f"recorded {data.count} pairs in {len(data.episodes)} episodes, "
      f"mean return {np.mean(data.returns):.1f} -> {path}")

# 4. A2C against M-PAC with reference + GAIL preferences
a2c = train(parse_config({"seed": seed, "epochs": epochs})).rows
mpac = train(parse_config({"seed": seed, "epochs": epochs, "lambda_cadence": "update",
                           "lambda_lr": 4e-3,
                           "preferences": [{"kind": "reference", "demo_path": str(path)},
                                           {"kind": "gail", "demo_path": str(path)}]})).rows

print("\nepoch    A2C   M-PAC  lambda_ref  lambda_gail")
for a, m in list(zip(a2c, mpac))[::max(1, epochs // 20)]:
    print(f"{a['epoch']:5d} {a['eval_mean']:7.0f} {m['eval_mean']:7.0f} {m['lambda_reference']:11.3f}"
          f" {m['lambda_gail']:12.4f}")
tail = min(5, epochs)
print(f"\nmean of the last {tail} evaluations: A2C {np.mean([r['eval_mean'] for r in a2c[-tail:]]):.0f}, "
      f"M-PAC {np.mean([r['eval_mean'] for r in mpac[-tail:]]):.0f}")

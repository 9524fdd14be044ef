"""
Multiplier dynamics on the pendulum
===================================

Train on the discretized pendulum with the entropy (l = 2.0) and
conservative-update (l = 0.03) preferences and print how each multiplier
moves.

The conservative-update metric starts far above its threshold, so its
multiplier climbs until the policy changes slowly enough, then eases off.
The entropy multiplier stays at zero while the policy is diffuse and only
switches on once the policy sharpens past the threshold (KL to uniform
above 2.0, out of a maximum of ln 9 = 2.197).

Multipliers take one step per policy update at 4e-3.  With the default
of one step per epoch at 1e-4 they barely leave zero within 100 epochs;
pass ``epoch`` as the second argument to see that.

Full size takes about a minute per 100 epochs on one core.  Usage:
``python3 tutorials/03_lambda_dynamics.py [epochs] [update|epoch]``.
"""

import sys

from mpac.harness import parse_config, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100
cadence = sys.argv[2] if len(sys.argv) > 2 else "update"
schedule = {"lambda_cadence": "update", "lambda_lr": 4e-3} if cadence == "update" else {}
cfg = parse_config({"epochs": epochs, **schedule, "preferences": ["entropy", "conserve"]})
rows = train(cfg).rows

print("epoch   eval    d_entropy lambda_entropy  d_conserve lambda_conserve")
for r in rows[::max(1, epochs // 20)]:
    print(f"{r['epoch']:5d} {r['eval_mean']:8.1f} {r['d_entropy']:10.4f} {r['lambda_entropy']:14.6f}"
          f" {r['d_conserve']:11.4f} {r['lambda_conserve']:15.6f}")

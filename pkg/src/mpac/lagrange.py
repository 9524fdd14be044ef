"""Lagrange multipliers and the constrained actor-critic objective.

The policy minimizes

    mean[-A log pi(a|s)] + sum_k lam_k * (mean d_k - l_k) + value/entropy terms

while each multiplier ascends its constraint violation and is projected
back onto lam_k >= 0.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidState
from .preferences import evaluate_preference
from .rollout import a2c_terms


@dataclass
class LagrangeState:
    multipliers: dict
    lr: float = 1e-4
    history: list = field(default_factory=list)

    def __post_init__(self):
        for k, v in self.multipliers.items():
            if not (math.isfinite(v) and v >= 0):
                raise InvalidState(f"multiplier {k} must be finite and >= 0, got {v}")


def make_lagrange(names, lr=1e-4):
    return LagrangeState({name: 0.0 for name in names}, float(lr))


def lambda_step(lam, mean_d, thresholds, epoch=None):
    """Projected ascent: lam_k <- max(0, lam_k + lr * (mean_d_k - l_k)).

    Updates ``lam`` in place and returns it.  ``epoch`` (if given) tags the
    history entries.
    """
    if set(mean_d) != set(lam.multipliers):
        raise InvalidState(f"mean_d keys {sorted(mean_d)} do not match multipliers "
                           f"{sorted(lam.multipliers)}")
    bad = [k for k, v in mean_d.items() if not math.isfinite(v)]
    if bad:
        raise InvalidState(f"non-finite preference metric for {bad}; multiplier step rejected")
    for k in lam.multipliers:
        lam.multipliers[k] = max(0.0, lam.multipliers[k] + lam.lr * (mean_d[k] - thresholds[k]))
        lam.history.append((epoch, k, lam.multipliers[k], mean_d[k]))
    return lam


@dataclass
class MpacLoss:
    loss: float
    grads: dict
    mean_d: dict
    components: dict


def mpac_loss(batch, ac, prefs, lam, beta, value_coef=0.5, gail_adv=None):
    """Saddle-point loss for the policy/value step with multipliers held fixed.

    ``prefs`` is a sequence of :class:`~mpac.preferences.PreferenceSpec`;
    ``gail_adv`` supplies A_gail when a ``gail`` preference is active.
    """
    terms = a2c_terms(batch, ac, beta, value_coef)
    loss = terms.loss
    dlogits = terms.dlogits
    mean_d = {}
    for pref in prefs:
        metric = evaluate_preference(pref, terms.logits, batch, gail_adv)
        m = metric.mean
        if not (math.isfinite(m) and np.all(np.isfinite(metric.dlogits))):
            raise InvalidState(f"non-finite metric from preference {pref.name!r}")
        weight = lam.multipliers[pref.name]
        loss = loss + weight * (m - pref.threshold)
        dlogits = dlogits + weight * metric.dlogits
        mean_d[pref.name] = m
    if not math.isfinite(loss):
        raise InvalidState(f"non-finite M-PAC loss: {terms.components}, metrics {mean_d}")
    grads = ac.backward(terms.cache, dlogits, terms.dvalues)
    return MpacLoss(loss, grads, mean_d, dict(terms.components))

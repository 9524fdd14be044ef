"""Preference critics: per-sample violation metrics and their logit gradients.

Each metric is a function of the live policy's logits on a batch and
returns a :class:`Metric` carrying the per-sample values ``d`` and the
gradient of ``mean(d)`` with respect to those logits.  Frozen targets (the
trailing copy for ``conserve`` and the behavior-cloned policy for
``reference``) and GAIL advantages enter as constants.
"""

from dataclasses import dataclass

import numpy as np

from . import diffnet
from .errors import InvalidArgument
from .policy import Categorical, child_seed, entropy, entropy_grad, kl, kl_grad, log_prob, \
    log_prob_grad, policy_logits
from .rollout import discounted_returns

KINDS = ("entropy", "conserve", "reference", "gail")
TARGET_FLOOR = 1e-8


@dataclass
class GailSubsystem:
    """Discriminator over ``obs ⊕ onehot(action)`` and the GAIL value net."""

    disc: diffnet.ParamSet
    value: diffnet.ParamSet
    disc_opt: diffnet.OptimizerState
    value_opt: diffnet.OptimizerState
    n_actions: int


@dataclass
class PreferenceSpec:
    kind: str
    threshold: float
    eta: float = 0.01
    target: diffnet.ParamSet = None
    gail: GailSubsystem = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown preference kind {self.kind!r}")
        if not self.threshold >= 0:
            raise InvalidArgument(f"{self.kind}: threshold must be >= 0, got {self.threshold}")
        if self.kind == "conserve" and not 0 < self.eta < 1:
            raise InvalidArgument(f"conserve: eta must lie in (0, 1), got {self.eta}")
        if self.kind in ("conserve", "reference") and self.target is None:
            raise InvalidArgument(f"{self.kind}: needs a target policy")
        if self.kind == "gail" and self.gail is None:
            raise InvalidArgument("gail: needs a GailSubsystem")

    @property
    def name(self):
        return self.kind


@dataclass
class Metric:
    values: np.ndarray
    dlogits: np.ndarray

    @property
    def mean(self):
        return float(np.mean(self.values))


# -- metrics on logits -------------------------------------------------------

def entropy_metric(logits):
    """KL(pi || uniform) = ln|A| - H(pi), per state."""
    dist = Categorical(np.atleast_2d(logits))
    n = dist.logits.shape[0]
    values = np.log(dist.n) - entropy(dist)
    return Metric(values, -entropy_grad(dist) / n)


def target_kl_metric(logits, target_logits, floor=TARGET_FLOOR):
    """KL(pi || target) per state with the target held constant."""
    p = Categorical(np.atleast_2d(logits))
    q = Categorical(np.atleast_2d(target_logits))
    n = p.logits.shape[0]
    return Metric(kl(p, q, floor), kl_grad(p, q, floor) / n)


def gail_metric(logits, actions, gail_adv):
    """-log pi(a|s) * A_gail(s, a); may be negative."""
    dist = Categorical(np.atleast_2d(logits))
    adv = np.asarray(gail_adv, dtype=float).ravel()
    n = dist.logits.shape[0]
    values = -log_prob(dist, actions) * adv
    return Metric(values, -adv[:, None] * log_prob_grad(dist, actions) / n)


# -- metrics on an actor-critic ----------------------------------------------

def d_entropy(ac, obs):
    return entropy_metric(ac.action_dist(np.atleast_2d(obs)).logits)


def d_conserve(ac, old_policy, obs):
    obs = np.atleast_2d(obs)
    return target_kl_metric(ac.action_dist(obs).logits, policy_logits(old_policy, obs, ac.n_actions))


def d_reference(ac, ref_policy, obs):
    obs = np.atleast_2d(obs)
    return target_kl_metric(ac.action_dist(obs).logits, policy_logits(ref_policy, obs, ac.n_actions))


def d_gail(ac, batch, gail_adv):
    return gail_metric(ac.action_dist(batch.flat_obs()).logits, batch.actions.ravel(), gail_adv)


def evaluate_preference(pref, logits, batch, gail_adv=None):
    """Metric of ``pref`` given live logits already computed on ``batch``."""
    if pref.kind == "entropy":
        return entropy_metric(logits)
    if pref.kind in ("conserve", "reference"):
        target = policy_logits(pref.target, batch.flat_obs(), logits.shape[-1])
        return target_kl_metric(logits, target)
    if gail_adv is None:
        raise InvalidArgument("gail preference evaluated without GAIL advantages")
    return gail_metric(logits, batch.actions.ravel(), gail_adv)


def metric_grads(ac, obs, dlogits):
    """Backpropagate a logit gradient into per-net GradSets of ``ac``."""
    _, _, cache = ac.heads(obs)
    return ac.backward(cache, dlogits)


def polyak_update(old, live, eta):
    """In place: old <- eta * live + (1 - eta) * old."""
    if not 0 < eta < 1:
        raise InvalidArgument(f"eta must lie in (0, 1), got {eta}")
    if old.layer_sizes != live.layer_sizes:
        raise InvalidArgument("polyak_update needs shape-congruent networks")
    for o, p in zip(old.arrays(), live.arrays()):
        o *= 1.0 - eta
        o += eta * p
    old.touch()
    return old


# -- GAIL ------------------------------------------------------------------

def make_gail(obs_dim, n_actions, hidden=(512, 512), seed=0, lr=1e-4):
    disc = diffnet.init_mlp([obs_dim + n_actions, *hidden, 1], child_seed(seed, 10))
    value = diffnet.init_mlp([obs_dim, *hidden, 1], child_seed(seed, 11))
    return GailSubsystem(disc, value, diffnet.make_optimizer(disc, "adam", lr),
                         diffnet.make_optimizer(value, "adam", lr), n_actions)


def _disc_inputs(g, obs, actions):
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    onehot = np.zeros((obs.shape[0], g.n_actions))
    onehot[np.arange(obs.shape[0]), np.asarray(actions, dtype=int).ravel()] = 1.0
    return np.concatenate([obs, onehot], axis=1)


def disc_logits(g, obs, actions):
    return diffnet.forward(g.disc, _disc_inputs(g, obs, actions))[0][:, 0]


def discriminator_loss(g, expert, agent):
    """Balanced binary cross-entropy: expert pairs labeled 1, agent pairs 0.

    ``expert`` and ``agent`` are ``(obs, actions)`` tuples.  Returns the loss
    and the discriminator GradSet.
    """
    grads = None
    total = 0.0
    for (obs, actions), label in ((expert, 1.0), (agent, 0.0)):
        x, tape = diffnet.forward(g.disc, _disc_inputs(g, obs, actions))
        x = x[:, 0]
        n = x.shape[0]
        if n == 0:
            raise InvalidArgument("discriminator batches must be nonempty")
        total += 0.5 * np.mean(np.logaddexp(0.0, x) - label * x)
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        gs = diffnet.backward(g.disc, tape, (0.5 * (sig - label) / n)[:, None])
        grads = gs if grads is None else grads + gs
    return float(total), grads


def gail_discriminator_step(g, expert, agent):
    """One optimizer step on the discriminator; returns the pre-step loss."""
    loss, grads = discriminator_loss(g, expert, agent)
    diffnet.apply_step(g.disc, grads, g.disc_opt)
    return loss


def discriminator_accuracy(g, expert, agent):
    correct = np.sum(disc_logits(g, *expert) > 0) + np.sum(disc_logits(g, *agent) <= 0)
    return float(correct) / (len(expert[1]) + len(agent[1]))


def gail_reward(g, obs, actions):
    """-log(1 - sigmoid(D(s, a))), computed as softplus(D)."""
    return np.logaddexp(0.0, disc_logits(g, obs, actions))


def gail_value(g, obs):
    return diffnet.forward(g.value, np.atleast_2d(obs))[0][:, 0]


def gail_advantage(g, batch, gamma, update_value=True):
    """One-step GAIL advantages for every transition, shaped like ``batch.actions``.

    A_gail = r_gail + gamma * V_gail(s') * (1 - done) - V_gail(s).  The
    advantages are computed first; afterwards (if ``update_value``) the GAIL
    value net takes one step toward n-step discounted r_gail returns.
    """
    shape = batch.actions.shape
    rewards = gail_reward(g, batch.flat_obs(), batch.actions.ravel()).reshape(shape)
    v_next = gail_value(g, batch.flat_next_obs()).reshape(shape)
    v, tape = diffnet.forward(g.value, batch.flat_obs())
    v = v[:, 0].reshape(shape)
    adv = rewards + gamma * v_next * (~batch.dones) - v

    if update_value:
        targets = discounted_returns(rewards, batch.dones, v_next[:, -1], gamma)
        n = v.size
        dv = (-2.0 * (targets - v) / n).reshape(n, 1)
        diffnet.apply_step(g.value, diffnet.backward(g.value, tape, dv), g.value_opt)
    return adv


"""Categorical policies with value heads, plus exact distribution arithmetic.

All functions accept a single logit vector or a batch with actions on the
last axis.  Gradients w.r.t. logits are provided next to each quantity so
losses can be assembled without a general autodiff graph.
"""

from dataclasses import dataclass

import numpy as np

from . import diffnet
from .errors import InvalidArgument


def log_softmax(logits):
    z = np.asarray(logits, dtype=float)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class Categorical:
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        self.log_probs = log_softmax(self.logits)

    @property
    def probs(self):
        return np.exp(self.log_probs)

    @property
    def n(self):
        return self.logits.shape[-1]


def _check_actions(dist, action):
    a = np.asarray(action)
    if np.any(a < 0) or np.any(a >= dist.n):
        raise InvalidArgument(f"action {action!r} outside [0, {dist.n})")
    return a.astype(int)


def log_prob(dist, action):
    """log pi(action); batched dists take one action per row."""
    a = _check_actions(dist, action)
    if dist.log_probs.ndim == 1:
        return float(dist.log_probs[a])
    return np.take_along_axis(dist.log_probs, a[..., None], axis=-1)[..., 0]


def log_prob_grad(dist, action):
    """d log pi(action) / d logits = onehot(action) - p."""
    a = _check_actions(dist, action)
    g = -dist.probs
    if g.ndim == 1:
        g[a] += 1.0
    else:
        np.put_along_axis(g, a[..., None], np.take_along_axis(g, a[..., None], -1) + 1.0, -1)
    return g


def entropy(dist):
    p = dist.probs
    h = -(p * dist.log_probs).sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def entropy_grad(dist):
    """dH/dz_j = -p_j (log p_j + H)."""
    p = dist.probs
    h = -(p * dist.log_probs).sum(axis=-1, keepdims=True)
    return -p * (dist.log_probs + h)


def _target_log_probs(q, floor):
    lq = q.log_probs
    if floor is not None:
        lq = np.maximum(lq, np.log(floor))
    return lq


def kl(p, q, floor=None):
    """KL(p || q) from log-softmax terms.

    ``floor`` bounds q's probabilities from below inside the log, keeping the
    value finite against near-deterministic targets.
    """
    if p.logits.shape[-1] != q.logits.shape[-1]:
        raise InvalidArgument(f"support sizes differ: {p.n} vs {q.n}")
    lq = _target_log_probs(q, floor)
    d = (p.probs * (p.log_probs - lq)).sum(axis=-1)
    return float(d) if np.ndim(d) == 0 else d


def kl_grad(p, q, floor=None):
    """d KL(p || q) / d (p's logits); q is treated as a constant."""
    lq = _target_log_probs(q, floor)
    probs = p.probs
    diff = p.log_probs - lq
    d = (probs * diff).sum(axis=-1, keepdims=True)
    return probs * (diff - d)


def uniform(n, batch_shape=()):
    return Categorical(np.zeros(tuple(batch_shape) + (n,)))


def sample(dist, rng):
    """Draw an action index by inverse-CDF from one uniform variate."""
    cdf = np.cumsum(dist.probs, axis=-1)
    if cdf.ndim == 1:
        return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), dist.n - 1)
    return np.array([sample(Categorical(row), rng) for row in dist.logits])


def sample_rows(dist, rngs):
    """Sample one action per row, row ``i`` consuming ``rngs[i]``."""
    cdf = np.cumsum(dist.probs, axis=-1)
    u = np.array([r.random() for r in rngs]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=-1)
    return np.minimum(idx, dist.n - 1)


def child_seed(seed, *keys):
    """Derive an independent integer seed from ``seed`` and extra keys."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def policy_logits(params, obs, n_actions):
    """Logits of a bare policy network (or of a shared trunk's policy head)."""
    out, _ = diffnet.forward(params, obs)
    return out[..., :n_actions]


@dataclass
class ActorCritic:
    """Policy net (obs -> |A| logits) and value net (obs -> V).

    With ``shared=True`` a single trunk emits ``|A| + 1`` outputs and
    ``policy`` and ``value`` refer to the same :class:`ParamSet`.
    """

    policy: diffnet.ParamSet
    value: diffnet.ParamSet
    n_actions: int
    shared: bool = False

    def nets(self):
        if self.shared:
            return {"shared": self.policy}
        return {"policy": self.policy, "value": self.value}

    def action_dist(self, obs):
        return Categorical(policy_logits(self.policy, obs, self.n_actions))

    def values(self, obs):
        if self.shared:
            return diffnet.forward(self.policy, obs)[0][..., self.n_actions]
        return diffnet.forward(self.value, obs)[0][..., 0]

    def heads(self, obs):
        """Forward both heads on a batch; returns ``(logits, values, cache)``."""
        obs = np.atleast_2d(obs)
        if self.shared:
            out, tape = diffnet.forward(self.policy, obs)
            return out[:, :self.n_actions], out[:, self.n_actions], (tape,)
        logits, ptape = diffnet.forward(self.policy, obs)
        values, vtape = diffnet.forward(self.value, obs)
        return logits, values[:, 0], (ptape, vtape)

    def backward(self, cache, dlogits, dvalues=None):
        """Map d(loss)/d(logits) and d(loss)/d(values) to per-net GradSets."""
        n = dlogits.shape[0]
        dv = np.zeros(n) if dvalues is None else np.asarray(dvalues, dtype=float)
        if self.shared:
            g = np.concatenate([dlogits, dv[:, None]], axis=1)
            return {"shared": diffnet.backward(self.policy, cache[0], g)}
        grads = {"policy": diffnet.backward(self.policy, cache[0], dlogits)}
        grads["value"] = diffnet.backward(self.value, cache[1], dv[:, None])
        return grads

    def copy(self):
        if self.shared:
            net = self.policy.copy()
            return ActorCritic(net, net, self.n_actions, True)
        return ActorCritic(self.policy.copy(), self.value.copy(), self.n_actions, False)


def make_actor_critic(obs_dim, n_actions, hidden=(512, 512), seed=0, shared=False):
    hidden = list(hidden)
    if shared:
        net = diffnet.init_mlp([obs_dim, *hidden, n_actions + 1], child_seed(seed, 0))
        return ActorCritic(net, net, n_actions, True)
    pol = diffnet.init_mlp([obs_dim, *hidden, n_actions], child_seed(seed, 0))
    val = diffnet.init_mlp([obs_dim, *hidden, 1], child_seed(seed, 1))
    return ActorCritic(pol, val, n_actions, False)


def action_dist(ac, obs):
    return ac.action_dist(obs)


class FrozenPolicy:
    """A bare policy network used only for acting (demonstrators, cloned policies)."""

    def __init__(self, params, n_actions):
        if params.n_out < n_actions:
            raise InvalidArgument(f"network has {params.n_out} outputs, need {n_actions}")
        self.policy = params
        self.n_actions = n_actions

    def action_dist(self, obs):
        return Categorical(policy_logits(self.policy, obs, self.n_actions))

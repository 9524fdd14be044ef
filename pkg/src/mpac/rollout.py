"""On-policy rollouts with n-step returns, and the A2C loss built on them."""

from dataclasses import dataclass, replace

import numpy as np

from . import diffnet
from .errors import InvalidState
from .policy import Categorical, entropy, entropy_grad, log_prob, log_prob_grad, sample_rows


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    log_prob: float


@dataclass(frozen=True)
class RolloutBatch:
    """Transitions laid out as ``(n_envs, n_steps, ...)`` arrays.

    ``values``, ``returns`` and ``advantages`` are filled by
    :func:`compute_returns`; ``bootstrap`` holds V of each segment's final
    next-observation.
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray = None
    bootstrap: np.ndarray = None
    returns: np.ndarray = None
    advantages: np.ndarray = None

    @property
    def n_envs(self):
        return self.actions.shape[0]

    @property
    def n_steps(self):
        return self.actions.shape[1]

    def __len__(self):
        return self.actions.size

    def flat_obs(self):
        return self.obs.reshape(len(self), -1)

    def flat_next_obs(self):
        return self.next_obs.reshape(len(self), -1)

    def transitions(self):
        for e in range(self.n_envs):
            for t in range(self.n_steps):
                yield Transition(self.obs[e, t], int(self.actions[e, t]), float(self.rewards[e, t]),
                                 self.next_obs[e, t], bool(self.dones[e, t]),
                                 float(self.log_probs[e, t]))


def collect(ac, envs, n_steps, rngs, action_fn=None):
    """Step every env ``n_steps`` times under the current policy.

    ``rngs[i]`` drives action sampling for ``envs[i]``.  Finished episodes
    are reset inline.  ``action_fn(obs_batch, t)`` overrides sampling (the
    recorded log-probs still come from the policy).
    """
    n_envs = len(envs)
    obs_dim = envs[0].obs_dim
    obs = np.empty((n_envs, n_steps, obs_dim))
    next_obs = np.empty_like(obs)
    actions = np.empty((n_envs, n_steps), dtype=int)
    rewards = np.empty((n_envs, n_steps))
    dones = np.zeros((n_envs, n_steps), dtype=bool)
    logps = np.empty((n_envs, n_steps))

    for t in range(n_steps):
        cur = np.stack([env.obs for env in envs])
        dist = ac.action_dist(cur)
        acts = sample_rows(dist, rngs) if action_fn is None else np.asarray(action_fn(cur, t), dtype=int)
        logps[:, t] = log_prob(dist, acts)
        obs[:, t] = cur
        actions[:, t] = acts
        for i, env in enumerate(envs):
            res = env.step(int(acts[i]))
            rewards[i, t] = res.reward
            next_obs[i, t] = res.obs
            dones[i, t] = res.done
            if res.done:
                env.reset()
    return RolloutBatch(obs, actions, rewards, next_obs, dones, logps)


def discounted_returns(rewards, dones, bootstrap, gamma):
    """Backward recursion R_t = r_t + gamma * (1 - done_t) * R_{t+1} per row."""
    returns = np.empty_like(rewards, dtype=float)
    running = np.asarray(bootstrap, dtype=float).copy()
    for t in range(rewards.shape[1] - 1, -1, -1):
        running = rewards[:, t] + gamma * np.where(dones[:, t], 0.0, running)
        returns[:, t] = running
    return returns


def compute_returns(batch, value_fn, gamma):
    """Attach bootstrapped n-step returns and advantages A_t = R_t - V(s_t).

    ``value_fn`` maps a batch of observations to a vector of values.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    values = np.asarray(value_fn(batch.flat_obs()), dtype=float).reshape(batch.actions.shape)
    bootstrap = np.asarray(value_fn(batch.next_obs[:, -1]), dtype=float).reshape(batch.n_envs)
    returns = discounted_returns(batch.rewards, batch.dones, bootstrap, gamma)
    return replace(batch, values=values, bootstrap=bootstrap, returns=returns,
                   advantages=returns - values)


@dataclass
class LossTerms:
    """Loss value plus gradients w.r.t. the network heads (not yet backpropagated)."""

    loss: float
    dlogits: np.ndarray
    dvalues: np.ndarray
    cache: tuple
    logits: np.ndarray
    components: dict


def a2c_terms(batch, ac, beta, value_coef):
    obs = batch.flat_obs()
    actions = batch.actions.ravel()
    adv = batch.advantages.ravel()
    ret = batch.returns.ravel()
    n = len(actions)

    logits, values, cache = ac.heads(obs)
    dist = Categorical(logits)
    lp = log_prob(dist, actions)
    ent = entropy(dist)

    policy_term = -np.mean(adv * lp)
    ent_mean = np.mean(ent)
    value_loss = np.mean((ret - values) ** 2)
    loss = policy_term - beta * ent_mean + value_coef * value_loss

    dlogits = -adv[:, None] * log_prob_grad(dist, actions) / n - beta * entropy_grad(dist) / n
    dvalues = -2.0 * value_coef * (ret - values) / n
    components = {"policy_loss": float(policy_term), "entropy": float(ent_mean),
                  "value_loss": float(value_loss)}
    return LossTerms(float(loss), dlogits, dvalues, cache, logits, components)


def a2c_loss(batch, ac, beta, value_coef=0.5):
    """Entropy-regularized A2C loss and gradients for both heads.

    L = mean[-A log pi(a|s) - beta H(pi(.|s))] + value_coef * mean[(R - V(s))^2]

    Returns ``(loss, grads, components)`` where ``grads`` maps net name to
    :class:`~mpac.diffnet.GradSet`.
    """
    terms = a2c_terms(batch, ac, beta, value_coef)
    if not np.isfinite(terms.loss):
        raise InvalidState(f"non-finite A2C loss: {terms.components}")
    grads = ac.backward(terms.cache, terms.dlogits, terms.dvalues)
    return terms.loss, grads, terms.components


def step_actor_critic(ac, grads, opts):
    """Apply one optimizer step to every net of ``ac``."""
    for name, params in ac.nets().items():
        diffnet.apply_step(params, grads[name], opts[name])


def make_optimizers(ac, lr, kind="adam"):
    return {name: diffnet.make_optimizer(p, kind, lr) for name, p in ac.nets().items()}

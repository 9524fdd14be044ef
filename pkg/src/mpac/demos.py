"""Recording and storing demonstrations, plus behavior cloning from them.

File layout (UTF-8 text, ``\\n`` line endings)::

    mpac-demos v1
    env <env id>
    generator <free text>
    returns <hex floats, comma separated>
    <episode> <step> <obs_0> ... <obs_{d-1}> <action>
    ...

Observations and returns are written with :meth:`float.hex`, so a
load/save cycle is exact.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnet
from .envs import Pendulum
from .errors import ConfigError, DemoParseError, InvalidArgument
from .policy import Categorical, child_seed, log_prob_grad, log_softmax, sample

FORMAT_TAG = "mpac-demos v1"


@dataclass
class DemonstrationSet:
    """Ordered ``(observation, action)`` pairs grouped into episodes.

    ``episodes`` is a list of ``(obs, actions)`` array pairs with shapes
    ``(T, obs_dim)`` and ``(T,)``.  ``returns`` holds undiscounted returns of
    the episodes that ran to completion while recording.
    """

    episodes: list
    env_id: str
    generator: str = ""
    returns: list = field(default_factory=list)

    def __post_init__(self):
        self.episodes = [(np.asarray(o, dtype=float).reshape(len(a), -1), np.asarray(a, dtype=int))
                         for o, a in self.episodes]
        dims = {o.shape[1] for o, _ in self.episodes if len(o)}
        if len(dims) > 1:
            raise InvalidArgument(f"observations have mixed dimensions {sorted(dims)}")

    @property
    def count(self):
        return sum(len(a) for _, a in self.episodes)

    def __len__(self):
        return self.count

    def as_arrays(self):
        obs = np.concatenate([o for o, _ in self.episodes])
        actions = np.concatenate([a for _, a in self.episodes])
        return obs, actions

    def __eq__(self, other):
        if not isinstance(other, DemonstrationSet):
            return NotImplemented
        return (self.env_id == other.env_id and self.generator == other.generator
                and list(self.returns) == list(other.returns)
                and len(self.episodes) == len(other.episodes)
                and all(np.array_equal(o1, o2) and np.array_equal(a1, a2)
                        for (o1, a1), (o2, a2) in zip(self.episodes, other.episodes)))

    def check_env(self, env_id):
        if env_id != self.env_id:
            raise ConfigError("demo_path", f"demonstrations were recorded on {self.env_id!r}, "
                                           f"not {env_id!r}")


def record(policy, env, n_transitions, seed=0, greedy=False, generator=""):
    """Roll ``policy`` in ``env`` until ``n_transitions`` pairs are stored.

    ``policy`` needs an ``action_dist(obs)`` method.  Greedy mode takes the
    argmax action (lowest index on ties); otherwise actions are sampled.
    """
    if n_transitions < 1:
        raise InvalidArgument("n_transitions must be >= 1")
    rng = np.random.default_rng(child_seed(seed, 1))
    obs = env.reset(seed=seed)
    episodes, returns = [], []
    ep_obs, ep_act, ep_ret = [], [], 0.0
    for _ in range(n_transitions):
        dist = policy.action_dist(obs)
        action = int(np.argmax(dist.logits)) if greedy else sample(dist, rng)
        ep_obs.append(obs)
        ep_act.append(action)
        res = env.step(action)
        ep_ret += res.reward
        obs = res.obs
        if res.done:
            episodes.append((np.array(ep_obs), np.array(ep_act)))
            returns.append(ep_ret)
            ep_obs, ep_act, ep_ret = [], [], 0.0
            obs = env.reset()
    if ep_act:
        episodes.append((np.array(ep_obs), np.array(ep_act)))
    return DemonstrationSet(episodes, env.env_id, generator, returns)


def _clean(text):
    return " ".join(str(text).split())


def dumps(demos):
    if demos.count == 0:
        raise InvalidArgument("refusing to save an empty demonstration set")
    lines = [FORMAT_TAG, f"env {demos.env_id}", f"generator {_clean(demos.generator)}",
             "returns " + ",".join(float(r).hex() for r in demos.returns)]
    for e, (obs, actions) in enumerate(demos.episodes):
        for t, (o, a) in enumerate(zip(obs, actions)):
            lines.append(" ".join([str(e), str(t), *(float(x).hex() for x in o), str(int(a))]))
    return "\n".join(lines) + "\n"


def save(demos, path):
    Path(path).write_text(dumps(demos), encoding="utf-8")
    return Path(path)


def _header(lines, idx, key):
    line = lines[idx] if idx < len(lines) else ""
    if not (line == key or line.startswith(key + " ")):
        raise DemoParseError(idx + 1, f"expected '{key}' header")
    return line[len(key) + 1:]


def loads(text):
    if not text.endswith("\n"):
        raise DemoParseError(text.count("\n") + 1, "truncated final line (no newline)")
    lines = text[:-1].split("\n")
    if lines[0] != FORMAT_TAG:
        raise DemoParseError(1, f"expected format tag {FORMAT_TAG!r}")
    env_id = _header(lines, 1, "env")
    generator = _header(lines, 2, "generator")
    raw_returns = _header(lines, 3, "returns")
    try:
        returns = [float.fromhex(x) for x in raw_returns.split(",") if x]
    except ValueError as exc:
        raise DemoParseError(4, f"bad return value: {exc}") from None

    episodes, obs_dim = [], None
    cur_obs, cur_act, cur_ep = [], [], None
    for lineno, line in enumerate(lines[4:], start=5):
        fields = line.split(" ")
        if obs_dim is None:
            obs_dim = len(fields) - 3
            if obs_dim < 1:
                raise DemoParseError(lineno, "record has no observation values")
        if len(fields) != obs_dim + 3:
            raise DemoParseError(lineno, f"expected {obs_dim + 3} fields, found {len(fields)}")
        try:
            ep, step, action = int(fields[0]), int(fields[1]), int(fields[-1])
            obs = [float.fromhex(x) for x in fields[2:-1]]
        except ValueError as exc:
            raise DemoParseError(lineno, str(exc)) from None
        if ep != cur_ep:
            if cur_ep is not None:
                episodes.append((np.array(cur_obs), np.array(cur_act)))
            if ep != len(episodes) or step != 0:
                raise DemoParseError(lineno, f"episode {ep} step {step} out of order")
            cur_ep, cur_obs, cur_act = ep, [], []
        elif step != len(cur_act):
            raise DemoParseError(lineno, f"episode {ep} step {step} out of order")
        if action < 0:
            raise DemoParseError(lineno, f"negative action {action}")
        cur_obs.append(obs)
        cur_act.append(action)
    if cur_ep is None:
        raise DemoParseError(len(lines), "file contains no records")
    episodes.append((np.array(cur_obs), np.array(cur_act)))
    return DemonstrationSet(episodes, env_id, generator, returns)


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))


def bc_loss(params, obs, actions):
    """Mean negative log-likelihood of ``actions`` under ``params`` (no dropout)."""
    logits, _ = diffnet.forward(params, obs)
    lp = log_softmax(logits)
    return float(-np.mean(lp[np.arange(len(actions)), actions]))


def behavior_clone(demos, layer_sizes, epochs=20, batch_size=64, dropout_rate=0.2, seed=0,
                   lr=1e-4, on_epoch=None):
    """Fit a categorical policy to the demonstrated actions by maximum likelihood.

    Parameters
    ----------
    demos : DemonstrationSet
    layer_sizes : sequence of int
        Full network shape; first entry is the observation size and last the
        number of actions.
    epochs, batch_size : int
        Passes over the (shuffled) data and minibatch size; a batch size of
        at least the dataset size gives full-batch training.
    dropout_rate : float
        Dropout on hidden activations while training; the returned network is
        used without it.
    on_epoch : callable, optional
        Called as ``on_epoch(epoch, params)`` after every epoch.
    """
    if demos.count == 0:
        raise InvalidArgument("behavior cloning needs a nonempty demonstration set")
    if not 0.0 <= dropout_rate < 1.0:
        raise InvalidArgument(f"dropout_rate must be in [0, 1), got {dropout_rate}")
    obs, actions = demos.as_arrays()
    if layer_sizes[0] != obs.shape[1] or actions.max() >= layer_sizes[-1]:
        raise InvalidArgument(f"layer sizes {list(layer_sizes)} do not fit observations of size "
                              f"{obs.shape[1]} and actions up to {actions.max()}")
    params = diffnet.init_mlp(layer_sizes, child_seed(seed, 20))
    opt = diffnet.make_optimizer(params, "adam", lr)
    rng = np.random.default_rng(child_seed(seed, 21))
    n = len(actions)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits, tape = diffnet.forward(params, obs[idx], training=True,
                                           dropout_rate=dropout_rate, rng=rng)
            dlogits = -log_prob_grad(Categorical(logits), actions[idx]) / len(idx)
            diffnet.apply_step(params, diffnet.backward(params, tape, dlogits), opt)
        if on_epoch is not None:
            on_epoch(epoch, params)
    return params


def argmax_agreement(params, obs, actions):
    logits, _ = diffnet.forward(params, obs)
    return float(np.mean(np.argmax(logits, axis=-1) == actions))


class ScriptedPolicy:
    """Wrap ``fn(obs) -> action`` as a near-deterministic categorical policy."""

    def __init__(self, fn, n_actions, gap=40.0):
        self.fn = fn
        self.n_actions = n_actions
        self.gap = gap

    def action_dist(self, obs):
        obs = np.asarray(obs, dtype=float)
        rows = np.atleast_2d(obs)
        logits = np.zeros((len(rows), self.n_actions))
        for i, o in enumerate(rows):
            logits[i, self.fn(o)] = self.gap
        return Categorical(logits[0] if obs.ndim == 1 else logits)


def swing_up_action(obs, catch_angle=0.6):
    """Energy-pumping swing-up with a PD catch near the top, for ``pendulum-disc9``.

    Uses the same dynamics as :class:`~mpac.envs.Pendulum`:
    theta'' = 15 sin(theta) + 3 u, so E = w^2 / 2 + 15 cos(theta) and
    dE/dt = 3 u w.
    """
    cos_t, sin_t, w = obs
    theta = np.arctan2(sin_t, cos_t)
    if abs(theta) < catch_angle:
        u = -(10.0 * theta + 2.0 * w)
    else:
        energy = 0.5 * w * w + 15.0 * cos_t
        u = 2.0 * np.sign(w) if energy < 15.0 else -2.0 * np.sign(w)
        if w == 0.0:
            u = 2.0
    u = float(np.clip(u, -2.0, 2.0))
    return int(np.argmin(np.abs(Pendulum.torques - u)))


def scripted_policy(env):
    """Hand-written demonstrator for a built-in environment."""
    if env.env_id == "pendulum-disc9":
        return ScriptedPolicy(swing_up_action, env.n_actions)
    if env.env_id.startswith("chain-"):
        return ScriptedPolicy(lambda obs: 1, env.n_actions)
    raise InvalidArgument(f"no scripted policy for {env.env_id!r}")

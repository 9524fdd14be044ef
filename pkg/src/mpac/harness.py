"""Run configuration and the training loop, with evaluation and metrics output.

One epoch consumes ``steps_per_epoch`` environment steps as successive
``n_envs x n_steps`` minibatches, each followed by one policy/value step.
Multipliers move once per epoch from the epoch-mean preference metrics
(or after every minibatch with ``lambda_cadence="update"``).
"""

import csv
import io
import json
import logging
import math
import os
import pickle
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import demos as demo_io
from .diffnet import save_params
from .envs import make_env
from .errors import ConfigError, InvalidArgument, InvalidState
from .lagrange import lambda_step, make_lagrange, mpac_loss
from .policy import child_seed, make_actor_critic, sample_rows
from .preferences import (KINDS, PreferenceSpec, gail_advantage, gail_discriminator_step,
                          make_gail, polyak_update)
from .rollout import collect, compute_returns, make_optimizers, step_actor_critic

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = {"entropy": 2.0, "conserve": 0.03, "gail": 0.1, "reference": 0.1}
OUTPUT_DIR_ENV = "MPAC_OUTPUT_DIR"


@dataclass
class PreferenceConfig:
    kind: str
    threshold: float = None
    eta: float = 0.01
    demo_path: str = None
    bc_epochs: int = 50
    bc_batch_size: int = 64
    bc_dropout: float = 0.2
    bc_lr: float = None
    gail_lr: float = None
    gail_hidden: list = None


@dataclass
class RunConfig:
    env: str = "pendulum-disc9"
    seed: int = 0
    epochs: int = 100
    steps_per_epoch: int = 1000
    n_envs: int = 8
    n_steps: int = 5
    gamma: float = 0.99
    policy_lr: float = 1e-4
    lambda_lr: float = 1e-4
    lambda_cadence: str = "epoch"
    beta: float = 0.1
    value_coef: float = 0.5
    hidden: list = field(default_factory=lambda: [512, 512])
    shared_trunk: bool = False
    eval_episodes: int = 10
    greedy_eval: bool = False
    output_dir: str = None
    checkpoint_every: int = 0
    preferences: list = field(default_factory=list)

    @property
    def updates_per_epoch(self):
        return max(1, self.steps_per_epoch // (self.n_envs * self.n_steps))

    @property
    def pref_kinds(self):
        return [p.kind for p in self.preferences]

    def to_dict(self):
        return asdict(self)


def _validate(cfg):
    if cfg.lambda_cadence not in ("epoch", "update"):
        raise ConfigError("lambda_cadence", f"must be 'epoch' or 'update', got {cfg.lambda_cadence!r}")
    for name in ("policy_lr", "lambda_lr"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(name, "step size must be > 0")
    if not 0 < cfg.gamma < 1:
        raise ConfigError("gamma", "must lie in (0, 1)")
    for name in ("epochs", "steps_per_epoch", "n_envs", "n_steps", "eval_episodes"):
        value = getattr(cfg, name)
        if not isinstance(value, int) or value < (0 if name == "epochs" else 1):
            raise ConfigError(name, f"invalid value {value!r}")
    if cfg.beta < 0 or cfg.value_coef < 0:
        raise ConfigError("beta" if cfg.beta < 0 else "value_coef", "must be >= 0")
    try:
        make_env(cfg.env)
    except InvalidArgument as exc:
        raise ConfigError("env", str(exc)) from None
    seen = set()
    for p in cfg.preferences:
        if p.kind not in KINDS:
            raise ConfigError("preferences.kind", f"unknown preference kind {p.kind!r}")
        if p.kind in seen:
            raise ConfigError("preferences", f"duplicate {p.kind!r} preference")
        seen.add(p.kind)
        if p.threshold < 0:
            raise ConfigError(f"{p.kind}.threshold", "must be >= 0")
        if p.kind == "conserve" and not 0 < p.eta < 1:
            raise ConfigError("conserve.eta", "must lie in (0, 1)")
        if p.kind in ("reference", "gail") and not p.demo_path:
            raise ConfigError(f"{p.kind}.demo_path", "required for this preference")


def _preference(raw):
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("preferences", f"each entry needs a 'kind', got {raw!r}")
    known = {f.name for f in fields(PreferenceConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{raw['kind']}.{sorted(unknown)[0]}", "unknown preference field")
    pref = PreferenceConfig(**raw)
    if pref.threshold is None:
        pref.threshold = DEFAULT_THRESHOLDS.get(pref.kind, 0.0)
    return pref


def parse_config(source=None, overrides=None):
    """Build a validated :class:`RunConfig`.

    ``source`` is a JSON file path, a dict, or None (all defaults).
    ``overrides`` is a dict of top-level keys applied on top.  The
    ``MPAC_OUTPUT_DIR`` environment variable overrides ``output_dir``.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = dict(source)
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read {source}: {exc}") from None
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config field")
    prefs = [_preference(p) for p in raw.pop("preferences", [])]
    cfg = RunConfig(**raw, preferences=prefs)
    cfg.hidden = [int(h) for h in cfg.hidden]
    if os.environ.get(OUTPUT_DIR_ENV):
        cfg.output_dir = os.environ[OUTPUT_DIR_ENV]
    _validate(cfg)
    return cfg


@dataclass
class EvalStats:
    mean: float
    min: float
    max: float
    returns: list


def evaluate(ac, env_id, episodes=10, seed=0, greedy=False):
    """Undiscounted returns of ``episodes`` full episodes, run side by side.

    Each episode gets its own environment seed derived from ``seed``;
    actions are sampled unless ``greedy``.
    """
    if episodes < 1:
        raise InvalidArgument("episodes must be >= 1")
    envs = [make_env(env_id) for _ in range(episodes)]
    obs = np.stack([env.reset(seed=child_seed(seed, 1, i)) for i, env in enumerate(envs)])
    rngs = [np.random.default_rng(child_seed(seed, 2, i)) for i in range(episodes)]
    returns = np.zeros(episodes)
    active = np.ones(episodes, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        dist = ac.action_dist(obs[idx])
        if greedy:
            acts = np.argmax(dist.logits, axis=-1)
        else:
            acts = sample_rows(dist, [rngs[i] for i in idx])
        for j, i in enumerate(idx):
            res = envs[i].step(int(acts[j]))
            returns[i] += res.reward
            obs[i] = res.obs
            if res.done:
                active[i] = False
    return EvalStats(float(returns.mean()), float(returns.min()), float(returns.max()),
                     returns.tolist())


class Trainer:
    """Mutable training state; pickles completely for checkpoints."""

    def __init__(self, cfg, demo_cache=None):
        self.cfg = cfg
        probe = make_env(cfg.env)
        self.obs_dim, self.n_actions = probe.obs_dim, probe.n_actions
        self.ac = make_actor_critic(self.obs_dim, self.n_actions, cfg.hidden, cfg.seed,
                                    cfg.shared_trunk)
        self.opts = make_optimizers(self.ac, cfg.policy_lr)
        self.envs = [make_env(cfg.env, child_seed(cfg.seed, 100, i)) for i in range(cfg.n_envs)]
        for env in self.envs:
            env.reset()
        self.rngs = [np.random.default_rng(child_seed(cfg.seed, 200, i)) for i in range(cfg.n_envs)]
        self.rng = np.random.default_rng(child_seed(cfg.seed, 300))
        self.epoch = 0
        self.env_steps = 0
        self.rows = []
        self.gail = None
        self.expert = None
        self.prefs = []
        demo_cache = {} if demo_cache is None else demo_cache
        for p in cfg.preferences:
            self.prefs.append(self._build_pref(p, demo_cache))
        self.thresholds = {p.name: p.threshold for p in self.prefs}
        self.lam = make_lagrange([p.name for p in self.prefs], cfg.lambda_lr)

    def _demos(self, path, cache):
        if path not in cache:
            cache[path] = demo_io.load(path)
        demos = cache[path]
        demos.check_env(self.cfg.env)
        return demos

    def _build_pref(self, p, cache):
        cfg = self.cfg
        if p.kind == "entropy":
            return PreferenceSpec("entropy", p.threshold)
        if p.kind == "conserve":
            return PreferenceSpec("conserve", p.threshold, eta=p.eta, target=self.ac.policy.copy())
        demos = self._demos(p.demo_path, cache)
        if p.kind == "reference":
            ref = demo_io.behavior_clone(demos, [self.obs_dim, *cfg.hidden, self.n_actions],
                                         p.bc_epochs, p.bc_batch_size, p.bc_dropout,
                                         child_seed(cfg.seed, 400), p.bc_lr or cfg.policy_lr)
            return PreferenceSpec("reference", p.threshold, target=ref)
        self.expert = demos.as_arrays()
        self.gail = make_gail(self.obs_dim, self.n_actions, p.gail_hidden or cfg.hidden,
                              child_seed(cfg.seed, 500), p.gail_lr or cfg.policy_lr)
        return PreferenceSpec("gail", p.threshold, gail=self.gail)

    @property
    def done(self):
        return self.epoch >= self.cfg.epochs

    def run_epoch(self):
        cfg = self.cfg
        sums = {name: 0.0 for name in self.thresholds}
        comp_sums = {}
        agent_obs, agent_act = [], []
        n_updates = cfg.updates_per_epoch
        for _ in range(n_updates):
            batch = collect(self.ac, self.envs, cfg.n_steps, self.rngs)
            batch = compute_returns(batch, self.ac.values, cfg.gamma)
            gail_adv = gail_advantage(self.gail, batch, cfg.gamma) if self.gail else None
            res = mpac_loss(batch, self.ac, self.prefs, self.lam, cfg.beta, cfg.value_coef, gail_adv)
            step_actor_critic(self.ac, res.grads, self.opts)
            for pref in self.prefs:
                if pref.kind == "conserve":
                    polyak_update(pref.target, self.ac.policy, pref.eta)
            if cfg.lambda_cadence == "update" and self.prefs:
                lambda_step(self.lam, res.mean_d, self.thresholds, self.epoch)
            for k, v in res.mean_d.items():
                sums[k] += v
            comp_sums["loss"] = comp_sums.get("loss", 0.0) + res.loss
            for k, v in res.components.items():
                comp_sums[k] = comp_sums.get(k, 0.0) + v
            if self.gail:
                agent_obs.append(batch.flat_obs())
                agent_act.append(batch.actions.ravel())
            self.env_steps += len(batch)

        mean_d = {k: v / n_updates for k, v in sums.items()}
        disc_loss = math.nan
        if self.gail:
            a_obs, a_act = np.concatenate(agent_obs), np.concatenate(agent_act)
            pick = self.rng.choice(len(self.expert[1]), size=len(a_act),
                                   replace=len(a_act) > len(self.expert[1]))
            disc_loss = gail_discriminator_step(self.gail, (self.expert[0][pick], self.expert[1][pick]),
                                                (a_obs, a_act))
        if cfg.lambda_cadence == "epoch" and self.prefs:
            lambda_step(self.lam, mean_d, self.thresholds, self.epoch)

        stats = evaluate(self.ac, cfg.env, cfg.eval_episodes, child_seed(cfg.seed, 900, self.epoch),
                         cfg.greedy_eval)
        row = {"epoch": self.epoch, "env_steps": self.env_steps, "eval_mean": stats.mean,
               "eval_min": stats.min, "eval_max": stats.max}
        row.update({k: v / n_updates for k, v in comp_sums.items()})
        row["disc_loss"] = disc_loss
        for name in self.thresholds:
            row[f"d_{name}"] = mean_d[name]
            row[f"lambda_{name}"] = self.lam.multipliers[name]
        self.rows.append(row)
        self.epoch += 1
        return row

    def columns(self):
        cols = ["epoch", "env_steps", "eval_mean", "eval_min", "eval_max", "loss", "policy_loss",
                "entropy", "value_loss", "disc_loss"]
        for name in self.thresholds:
            cols += [f"d_{name}", f"lambda_{name}"]
        return cols


def format_metrics(rows, columns):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()


def read_metrics(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k in ("epoch", "env_steps") else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def save_checkpoint(trainer, path):
    Path(path).write_bytes(pickle.dumps(trainer, protocol=pickle.HIGHEST_PROTOCOL))
    return Path(path)


def load_checkpoint(path):
    trainer = pickle.loads(Path(path).read_bytes())
    if not isinstance(trainer, Trainer):
        raise InvalidState(f"{path} does not hold a training checkpoint")
    return trainer


@dataclass
class TrainResult:
    ac: object
    rows: list
    lam: object
    metrics_path: Path = None
    trainer: Trainer = None


def train(cfg, resume=None, demo_cache=None):
    """Run (or resume) training until ``cfg.epochs`` epochs are complete.

    Writes ``metrics.csv``, ``checkpoint.pkl`` and the final policy/value
    parameters to ``cfg.output_dir`` when it is set.
    """
    trainer = load_checkpoint(resume) if resume else Trainer(cfg, demo_cache)
    if resume:
        trainer.cfg = replace(trainer.cfg, epochs=cfg.epochs, output_dir=cfg.output_dir)
    out = Path(cfg.output_dir) if cfg.output_dir else None
    metrics_path = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        metrics_path.write_text(format_metrics(trainer.rows, trainer.columns()))
    while not trainer.done:
        snapshot = pickle.dumps(trainer, protocol=pickle.HIGHEST_PROTOCOL) if out else None
        try:
            row = trainer.run_epoch()
        except InvalidState:
            if out:
                (out / "checkpoint.pkl").write_bytes(snapshot)
                log.error("non-finite values at epoch %d; last good state saved", trainer.epoch)
            raise
        log.info("epoch %d steps %d eval %.2f", row["epoch"], row["env_steps"], row["eval_mean"])
        if out:
            with open(metrics_path, "a") as fh:
                fh.write(format_metrics([row], trainer.columns()).split("\n", 1)[1])
            if cfg.checkpoint_every and trainer.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(trainer, out / "checkpoint.pkl")
    if out:
        save_checkpoint(trainer, out / "checkpoint.pkl")
        for name, params in trainer.ac.nets().items():
            save_params(params, out / f"{name}.npz")
    return TrainResult(trainer.ac, trainer.rows, trainer.lam, metrics_path, trainer)

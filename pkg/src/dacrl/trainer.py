"""Distributed off-policy actor-critic with policy consensus.

Every environment step all agents update their critics from the shared
behaviour transition and their private reward. Every ``subsample`` steps the
actors take a local policy-gradient step and mix parameters with their graph
neighbours.
"""

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .consensus import (PolicyEnsemble, consensus_step, disagreement_norm,
                        local_policy_gradient)
from .critic import CriticState, Transition, gtd_step
from .envs import QuadraticToyEnv, ResourceState, make_resource_env, to_learner_action
from .errors import ConfigError, ContractError, DivergenceError
from .evaluation import evaluate_policy
from .features import RbfFeatureMap, eval_features
from .network import Channel, TopologyGraph, WeightMatrixSampler, spectral_contraction

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def step_size(exponent, t):
    """Deterministic schedule ``t^-exponent`` for ``t >= 1``."""
    if t < 1:
        raise ContractError(f"step-size index must be >= 1, got {t}")
    return float(t) ** -exponent


@dataclass
class TrainTrace:
    """Per-actor-update log. ``wall_clock`` is excluded from equality."""

    steps: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    disagreement: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list, compare=False)

    def log_update(self, step, iteration, dis, wall):
        if self.steps and step <= self.steps[-1]:
            raise ContractError("trace steps must be strictly increasing")
        self.steps.append(step)
        self.iterations.append(iteration)
        self.disagreement.append(dis)
        self.wall_clock.append(wall)

    def to_dict(self):
        return {"steps": self.steps, "iterations": self.iterations,
                "disagreement": self.disagreement, "evals": self.evals,
                "snapshots": self.snapshots, "wall_clock": self.wall_clock}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: list(v) for k, v in d.items()})


def build_env(env_cfg, graph):
    if env_cfg.kind == "resource":
        return make_resource_env(
            graph, params_seed=env_cfg.params_seed,
            amplitude=(env_cfg.amplitude_low, env_cfg.amplitude_high),
            omega=(env_cfg.omega_low, env_cfg.omega_high), noise_frac=env_cfg.noise_frac,
            m_box=(env_cfg.m_min, env_cfg.m_max), a_max=env_cfg.a_max, dt=env_cfg.dt,
            m0=env_cfg.m0, tbar0=env_cfg.tbar0, reward_scale=env_cfg.reward_scale)
    if env_cfg.kind == "toy":
        env = QuadraticToyEnv(env_cfg.targets, env_cfg.weights or None, env_cfg.behavior_width)
        if env.n_agents != graph.n:
            raise ConfigError(f"toy task has {env.n_agents} targets but the graph has "
                              f"{graph.n} agents")
        return env
    raise ConfigError(f"unknown env kind {env_cfg.kind!r}")


def build_feature_map(feat_cfg, env):
    low, high = env.obs_box()
    return RbfFeatureMap.random(feat_cfg.n_features, low, high, feat_cfg.width, feat_cfg.seed)


def preflight(config):
    """Assemble graph, sampler, env and features; reject configs that break the
    convergence assumptions before any stepping."""
    graph = TopologyGraph.parse(config.topology)
    sampler = WeightMatrixSampler(graph, config.scheme, config.seeds.gossip)
    spectral_contraction(sampler, strict=True)
    env = build_env(config.env, graph)
    fmap = build_feature_map(config.features, env)
    return graph, sampler, env, fmap


class Trainer:
    """Stateful runner; :meth:`run` advances, :meth:`checkpoint` snapshots."""

    def __init__(self, config, *, record_messages=False, snapshot_params=False):
        self.config = config
        self.graph, self.sampler, self.env, self.fmap = preflight(config)
        n = self.graph.n
        n_theta, n_a = self.fmap.n_features, self.env.n_actions
        init_rng = np.random.default_rng(config.seeds.init)
        theta0 = config.init_scale * init_rng.standard_normal((n, n_theta, n_a))
        self.ensemble = PolicyEnsemble(theta0)
        self.critics = [CriticState.zeros(n_theta, n_a) for _ in range(n)]
        self.env_rng = np.random.default_rng(config.seeds.env)
        self.behavior_rng = np.random.default_rng(config.seeds.behavior)
        self.state = self.env.initial_state(rng=self.env_rng)
        self.t = 0
        self.k = 0
        self.trace = TrainTrace()
        self.channel = Channel(self.graph, record_reads=record_messages)
        self.snapshot_params = snapshot_params
        self._recent_obs = []
        self._params = self.ensemble.params
        self.r_max = self.env.reward_bound() * self.env.reward_scale * (1 + 1e-12)

    # -- main loop ---------------------------------------------------------

    def run(self, until=None):
        cfg = self.config
        until = cfg.steps if until is None else min(until, cfg.steps)
        if self.t == 0 and cfg.steps > 0 and not self.trace.evals and cfg.eval.every:
            self._evaluate()
        env, fmap = self.env, self.fmap
        obs = env.observe(self.state)
        phi = eval_features(fmap, obs)
        n = self.graph.n
        while self.t < until:
            t = self.t + 1
            action = env.behavior_action(self.state, self.behavior_rng)
            next_state, rewards = env.step(self.state, action, self.env_rng)
            obs_next = env.observe(next_state)
            phi_next = eval_features(fmap, obs_next)
            tr = Transition(obs, np.atleast_1d(to_learner_action(env, action)),
                            np.atleast_1d(rewards) * env.reward_scale, obs_next, t, self.r_max)
            alpha_w = step_size(cfg.critic_exponent, t)
            try:
                for i in range(n):
                    self.critics[i] = gtd_step(self.critics[i], fmap, tr, self._params[i],
                                               cfg.gamma, alpha_w, alpha_w, i,
                                               phi=phi, phi_next=phi_next)
            except DivergenceError as exc:
                exc.detail.update(self._diagnostic(t))
                raise
            self.state, obs, phi = next_state, obs_next, phi_next
            self.t = t
            self._recent_obs.append(obs_next)
            del self._recent_obs[:-cfg.grad_window]
            if t > cfg.warmup and t % cfg.subsample == 0:
                self._actor_update()
            if cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
                self._last_checkpoint = self.checkpoint()
        return self.trace

    def _actor_update(self):
        cfg = self.config
        self.k += 1
        phis = eval_features(self.fmap, np.stack(self._recent_obs))
        grads = np.stack([
            np.mean([local_policy_gradient(self.fmap, None, c, phi=p) for p in phis], axis=0)
            for c in self.critics])
        W = self.sampler.sample()
        alpha = step_size(cfg.actor_exponent, self.k)
        try:
            self.ensemble = consensus_step(self.ensemble, grads, W, alpha,
                                           graph=self.graph, channel=self.channel)
        except DivergenceError as exc:
            exc.step = self.t
            exc.detail.update(self._diagnostic(self.t))
            raise
        self._params = self.ensemble.params
        dis = disagreement_norm(self.ensemble)
        self.trace.log_update(self.t, self.k, dis, time.perf_counter())
        if self.snapshot_params:
            self.trace.snapshots.append(self.ensemble.to_list())
        if cfg.eval.every and self.k % cfg.eval.every == 0:
            self._evaluate()

    def _evaluate(self):
        cfg = self.config
        means, errs = [], []
        for p in self._params:
            # same stream for every agent: common random numbers across agents
            rng = np.random.default_rng([cfg.seeds.eval, self.k])
            m, s = evaluate_policy(p.theta, self.env, self.fmap, cfg.eval, rng, cfg.gamma)
            means.append(m)
            errs.append(s)
        self.trace.evals.append({"iteration": self.k, "step": self.t,
                                 "disagreement": disagreement_norm(self.ensemble),
                                 "mean": means, "stderr": errs})
        log.info("iteration %d (step %d): mean return %.4g", self.k, self.t, float(np.mean(means)))

    def _diagnostic(self, t):
        return {"iteration": self.k, "step": t,
                "state": self.env_state_dict()}

    # -- checkpointing -----------------------------------------------------

    def env_state_dict(self):
        s = self.state
        if isinstance(s, ResourceState):
            return {"m": s.m.tolist(), "tbar": s.tbar.tolist()}
        return {"s": np.asarray(s).tolist()}

    def _set_env_state(self, d):
        if "m" in d:
            self.state = ResourceState(np.array(d["m"], dtype=float), np.array(d["tbar"], dtype=float))
        else:
            self.state = np.array(d["s"], dtype=float)

    def checkpoint(self):
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "env_params": self.env.realized_params(),
            "feature_map": self.fmap.to_dict(),
            "counters": {"t": self.t, "k": self.k},
            "env_state": self.env_state_dict(),
            "recent_obs": [np.asarray(o).tolist() for o in self._recent_obs],
            "thetas": self.ensemble.to_list(),
            "critics": [c.to_dict() for c in self.critics],
            "rng": {"env": self.env_rng.bit_generator.state,
                    "behavior": self.behavior_rng.bit_generator.state,
                    "gossip": self.sampler.get_state()},
            "trace": self.trace.to_dict(),
        }

    @classmethod
    def from_checkpoint(cls, ckpt, **kwargs):
        if ckpt.get("version") != CHECKPOINT_VERSION:
            raise ConfigError("unsupported checkpoint version")
        config = TrainConfig.from_dict(ckpt["config"])
        self = cls(config, **kwargs)
        fmap = RbfFeatureMap.from_dict(ckpt["feature_map"])
        if not (np.array_equal(fmap.centers, self.fmap.centers)
                and np.array_equal(fmap.widths, self.fmap.widths)):
            raise ConfigError("checkpoint feature map does not match its config")
        if self.env.realized_params() != ckpt["env_params"]:
            raise ConfigError("checkpoint environment parameters do not match its config")
        self.t = int(ckpt["counters"]["t"])
        self.k = int(ckpt["counters"]["k"])
        self._set_env_state(ckpt["env_state"])
        self._recent_obs = [np.array(o, dtype=float) for o in ckpt["recent_obs"]]
        self.ensemble = PolicyEnsemble(np.array(ckpt["thetas"], dtype=float))
        self._params = self.ensemble.params
        self.critics = [CriticState.from_dict(c) for c in ckpt["critics"]]
        self.env_rng.bit_generator.state = ckpt["rng"]["env"]
        self.behavior_rng.bit_generator.state = ckpt["rng"]["behavior"]
        self.sampler.set_state(ckpt["rng"]["gossip"])
        self.trace = TrainTrace.from_dict(ckpt["trace"])
        return self


def save_checkpoint(ckpt, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ckpt, fh, indent=1)


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def train(config, **kwargs):
    """Run the full schedule and return the :class:`TrainTrace`."""
    trainer = Trainer(config, **kwargs)
    return trainer.run()

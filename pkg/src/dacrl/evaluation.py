"""Policy evaluation, ascent-direction checks and learning-curve tables."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .critic import CriticState, Transition, gtd_step
from .envs import behavior_states, to_learner_action, to_physical_action
from .errors import ContractError, DivergenceError
from .features import PolicyParams, eval_features

CSV_HEADER = ("run_id", "seed", "iteration", "agent_id", "mean_return", "stderr_return",
              "disagreement_norm")


def rollout_returns(theta, env, fmap, horizon, rng, *, rollouts=None, start=None, gamma=None):
    """Network-wide return of each rollout under the frozen policy ``theta``.

    Rollouts run as one batch. ``start`` overrides the environment's initial
    state distribution; ``gamma`` switches on discounting.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[0] != fmap.n_features:
        raise ContractError(f"theta has {theta.shape[0]} rows, feature map has {fmap.n_features}")
    state = env.initial_state(batch=rollouts, rng=rng) if start is None else start
    total = None
    disc = 1.0
    for _ in range(horizon):
        phi = eval_features(fmap, env.observe(state))
        action = to_physical_action(env, phi @ theta)
        state, rewards = env.step(state, action, rng)
        r = np.sum(rewards, axis=-1)
        total = disc * r if total is None else total + disc * r
        if gamma is not None:
            disc *= gamma
    return np.atleast_1d(total)


def evaluate_policy(theta, env, fmap, protocol, rng, gamma=None):
    """Mean and standard error of the network return over ``protocol.rollouts`` rollouts."""
    if isinstance(theta, PolicyParams):
        theta = theta.theta
    returns = rollout_returns(theta, env, fmap, protocol.horizon, rng,
                              rollouts=protocol.rollouts,
                              gamma=gamma if protocol.discounted else None)
    if not np.all(np.isfinite(returns)):
        raise DivergenceError("policy evaluation produced a non-finite return")
    mean = float(np.mean(returns))
    stderr = float(np.std(returns, ddof=1) / np.sqrt(returns.size)) if returns.size > 1 else 0.0
    return mean, stderr


# --------------------------------------------------------------------------
# ascent check


def fit_critics(env, fmap, params, gamma, n_steps, rng, *, scale=1.0, exponent=0.55,
                offset=1.0, critics=None):
    """Run every agent's TDC critic along one behaviour trajectory for fixed ``params``.

    ``params`` is a single :class:`PolicyParams` shared by all agents (the
    network-average policy). Step size at update ``t`` is
    ``scale * (t + offset)^-exponent``.
    """
    n_theta, n_a = params.theta.shape
    if critics is None:
        critics = [CriticState.zeros(n_theta, n_a) for _ in range(env.n_agents)]
    critics = list(critics)
    state = env.initial_state(rng=rng)
    obs = env.observe(state)
    phi = eval_features(fmap, obs)
    for t in range(1, n_steps + 1):
        a = env.behavior_action(state, rng)
        state, rewards = env.step(state, a, rng)
        obs_next = env.observe(state)
        phi_next = eval_features(fmap, obs_next)
        tr = Transition(obs, np.atleast_1d(to_learner_action(env, a)),
                        np.atleast_1d(rewards) * env.reward_scale, obs_next, t)
        alpha = scale * (t + offset) ** -exponent
        for i in range(len(critics)):
            critics[i] = gtd_step(critics[i], fmap, tr, params, gamma, alpha, alpha, i,
                                  phi=phi, phi_next=phi_next)
        obs, phi = obs_next, phi_next
    return critics


@dataclass
class AscentResult:
    inner: float
    ci: tuple
    conclusive: bool
    grad_hat: np.ndarray = field(repr=False)
    grad_fd: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)

    @property
    def sign(self):
        if not self.conclusive:
            return 0
        return 1 if self.ci[0] > 0 else -1


def ascent_check(theta_bar, critics, env, fmap, gamma, *, n_samples=2000, fd_step=1e-2,
                 rollouts=200, horizon=None, max_coords=20, n_boot=2000, level=0.95, seed=0):
    """Estimate ``<grad J_beta(theta_bar), approx_grad J_beta(theta_bar)>`` with a bootstrap CI.

    The approximate gradient averages ``phi phi^T sum_i W_i`` over behaviour
    states. The true gradient is estimated by central finite differences of
    discounted rollout returns started from behaviour states, using common
    random numbers for the two sides of every difference.
    """
    if isinstance(theta_bar, PolicyParams):
        theta_bar = theta_bar.theta
    theta_bar = np.asarray(theta_bar, dtype=float)
    n_theta, n_a = theta_bar.shape
    rng = np.random.default_rng(seed)
    W_sum = sum(c.w.reshape((n_theta, n_a), order="F") for c in critics)

    phi = eval_features(fmap, env.observe(behavior_states(env, n_samples, rng)))
    # per-sample approximate gradients, flattened column-major
    G = np.einsum("mk,ml->mkl", phi, phi @ W_sum).transpose(0, 2, 1).reshape(n_samples, -1)
    grad_hat = G.mean(axis=0)

    n_par = n_theta * n_a
    coords = np.arange(n_par) if n_par <= max_coords else np.sort(
        rng.choice(n_par, size=max_coords, replace=False))
    horizon = horizon or max(1, int(math.ceil(math.log(1e-6) / math.log(gamma))))
    start = behavior_states(env, rollouts, rng, thin=5)
    crn_seed = int(rng.integers(2 ** 32))
    h = fd_step * max(1.0, float(np.abs(theta_bar).max()))
    D = np.empty((rollouts, coords.size))
    for col, c in enumerate(coords):
        flat = theta_bar.ravel(order="F")
        plus, minus = flat.copy(), flat.copy()
        plus[c] += h
        minus[c] -= h
        jp = rollout_returns(plus.reshape((n_theta, n_a), order="F"), env, fmap, horizon,
                             np.random.default_rng(crn_seed), start=start, gamma=gamma)
        jm = rollout_returns(minus.reshape((n_theta, n_a), order="F"), env, fmap, horizon,
                             np.random.default_rng(crn_seed), start=start, gamma=gamma)
        D[:, col] = (jp - jm) * env.reward_scale / (2.0 * h)
    grad_fd = D.mean(axis=0)
    inner = float(grad_hat[coords] @ grad_fd)

    boot = np.empty(n_boot)
    Gc = G[:, coords]
    for b in range(n_boot):
        gi = rng.integers(n_samples, size=n_samples)
        di = rng.integers(rollouts, size=rollouts)
        boot[b] = Gc[gi].mean(axis=0) @ D[di].mean(axis=0)
    tail = (1.0 - level) / 2.0
    lo, hi = (float(x) for x in np.quantile(boot, [tail, 1.0 - tail]))
    conclusive = lo > 0.0 or hi < 0.0
    return AscentResult(inner, (lo, hi), conclusive, grad_hat, grad_fd, coords)


def ascent_survey(env, fmap, gamma, thetas, *, critic_steps=20000, seed=0, **kwargs):
    """Fit fresh critics at every ``theta`` in ``thetas`` and run :func:`ascent_check`."""
    out = []
    for n, theta in enumerate(thetas):
        theta = np.asarray(theta, dtype=float)
        critics = fit_critics(env, fmap, PolicyParams(theta), gamma, critic_steps,
                              np.random.default_rng([seed, n]))
        out.append(ascent_check(theta, critics, env, fmap, gamma, seed=seed + 7919 * (n + 1),
                                **kwargs))
    return out


def ray_points(optimum, n, rng, *, low=-1.0, high=0.8, jitter=0.05):
    """``n`` probe points ``lam * optimum + noise`` with ``lam ~ U[low, high]``.

    The critic estimate targets the value slope at the behaviour-mean action,
    so on the toy task it points from the origin toward the optimum at every
    policy. Probes on that ray keep the true gradient aligned with it; the
    noise is small relative to ``|optimum|`` so the check still exercises
    off-ray coordinates.
    """
    optimum = np.asarray(optimum, dtype=float)
    scale = jitter * np.linalg.norm(optimum) / np.sqrt(optimum.size)
    lam = rng.uniform(low, high, size=n)
    return [l * optimum + rng.normal(0.0, scale, size=optimum.shape) for l in lam]


# --------------------------------------------------------------------------
# curves and CSV


def trace_rows(trace, run_id, seed):
    """One CSV row per (evaluated iteration, agent)."""
    rows = []
    for ev in trace.evals:
        for agent, (m, s) in enumerate(zip(ev["mean"], ev["stderr"])):
            rows.append({"run_id": run_id, "seed": seed, "iteration": ev["iteration"],
                         "agent_id": agent, "mean_return": m, "stderr_return": s,
                         "disagreement_norm": ev["disagreement"]})
    return rows


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_rows(path, rows, header=CSV_HEADER):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in header])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def assemble_curves(traces):
    """Mean and (population) variance of evaluated returns per (iteration, agent).

    Sums use :func:`math.fsum`, so the table does not depend on trace order.
    """
    if not traces:
        raise ContractError("need at least one trace")
    grids = [tuple(ev["iteration"] for ev in tr.evals) for tr in traces]
    if any(g != grids[0] for g in grids):
        raise ContractError("traces were evaluated on different iteration grids")
    out = []
    for pos, it in enumerate(grids[0]):
        n_agents = len(traces[0].evals[pos]["mean"])
        for agent in range(n_agents):
            vals = [tr.evals[pos]["mean"][agent] for tr in traces]
            mean = math.fsum(vals) / len(vals)
            var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
            out.append({"iteration": it, "agent_id": agent, "mean_return": mean,
                        "var_return": var, "n_trials": len(vals)})
    return out


CURVE_HEADER = ("iteration", "agent_id", "mean_return", "var_return", "n_trials")

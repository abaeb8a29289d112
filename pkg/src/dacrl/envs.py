"""Environments.

* :class:`ResourceEnv` - networked resource allocation with sinusoidal demand.
* :class:`EnumerableMDP` - tiny finite MDP with exact behaviour statistics,
  used as ground truth for the critic.
* :class:`QuadraticToyEnv` - scalar state/action task whose off-policy
  objective has a closed-form gradient.

Every environment speaks the same batched protocol used by the trainer and
evaluation code: ``initial_state(batch, rng)``, ``observe(state)``,
``step(state, action, rng) -> (state, rewards)``,
``behavior_action(state, rng)``, ``stack_states(states)``, plus the
affine action map ``physical = action_offset + action_scale * learner``
and ``reward_scale`` (learner reward = ``reward_scale`` * physical reward).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


# --------------------------------------------------------------------------
# resource allocation


@dataclass(frozen=True)
class DemandModel:
    """Per-agent demand ``A sin(omega tbar + phase) + N(0, sigma^2)``."""

    amplitude: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    sigma: np.ndarray

    @classmethod
    def random(cls, n_agents, rng, amplitude=(5.0, 15.0), omega=(0.05, 0.2), noise_frac=0.1):
        A = rng.uniform(*amplitude, size=n_agents)
        w = rng.uniform(*omega, size=n_agents)
        ph = rng.uniform(0.0, 2.0 * np.pi, size=n_agents)
        return cls(A, w, ph, noise_frac * A)

    @property
    def period(self):
        return 2.0 * np.pi / self.omega

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("amplitude", "omega", "phase", "sigma")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.array(d[k], dtype=float) for k in ("amplitude", "omega", "phase", "sigma")))


@dataclass(frozen=True)
class ResourceState:
    """Resource levels ``m`` and demand phases ``tbar``; shape ``(N,)`` or ``(B, N)``."""

    m: np.ndarray
    tbar: np.ndarray


def reward_fn(m):
    """Zero for non-negative resources, ``-(-m)^3`` for a shortfall."""
    m = np.asarray(m, dtype=float)
    r = np.where(m < 0.0, -(-np.minimum(m, 0.0)) ** 3, 0.0)
    return r if r.ndim else float(r)


class ResourceEnv:
    """Centers on a graph exchanging resources along directed edges.

    Learner-facing actions are centred: ``u`` in [-1, 1] maps to the transfer
    ``a_max * (1 + u) / 2``, so ``u = 0`` sends equal amounts both ways along
    every link. :meth:`step` takes physical amounts.
    """

    def __init__(self, graph, demand, m_box=(-50.0, 50.0), a_max=10.0, dt=1.0,
                 m0=10.0, tbar0=0.0, reward_scale=1.0):
        self.graph = graph
        self.demand = demand
        self.m_min, self.m_max = float(m_box[0]), float(m_box[1])
        if not self.m_min < self.m_max:
            raise ConfigError("resource box must have m_min < m_max")
        if a_max < 0:
            raise ConfigError("a_max must be non-negative")
        self.a_max = float(a_max)
        self.dt = float(dt)
        self.n_agents = graph.n
        self.edges = graph.directed_edges()
        self.n_actions = len(self.edges)
        self.m0 = np.broadcast_to(np.asarray(m0, dtype=float), (self.n_agents,)).copy()
        self.tbar0 = np.broadcast_to(np.asarray(tbar0, dtype=float), (self.n_agents,)).copy()
        self.reward_scale = float(reward_scale)
        self.m_scale = max(abs(self.m_min), abs(self.m_max))
        # net inflow per node = action @ flow
        flow = np.zeros((self.n_actions, self.n_agents))
        for e, (i, j) in enumerate(self.edges):
            flow[e, i] -= 1.0
            flow[e, j] += 1.0
        self._flow = flow
        period = self.demand.period
        if np.any(np.abs(self.tbar0) > period / 2):
            raise ConfigError("initial demand phase outside [-T/2, T/2)")

    @property
    def obs_dim(self):
        return 3 * self.n_agents

    @property
    def action_scale(self):
        return self.a_max / 2.0

    @property
    def action_offset(self):
        return self.a_max / 2.0

    def reward_bound(self):
        """Largest possible per-agent penalty magnitude."""
        return max(0.0, -self.m_min) ** 3

    def obs_box(self):
        d = self.obs_dim
        return -np.ones(d), np.ones(d)

    def initial_state(self, batch=None, rng=None):
        shape = (self.n_agents,) if batch is None else (batch, self.n_agents)
        return ResourceState(np.broadcast_to(self.m0, shape).copy(),
                             np.broadcast_to(self.tbar0, shape).copy())

    def observe(self, state):
        ang = 2.0 * np.pi * state.tbar / self.demand.period
        obs = np.stack([state.m / self.m_scale, np.cos(ang), np.sin(ang)], axis=-1)
        return obs.reshape(obs.shape[:-2] + (self.obs_dim,))

    def demand_at(self, tbar, rng):
        d = self.demand
        noise = rng.standard_normal(np.shape(tbar))
        return d.amplitude * np.sin(d.omega * tbar + d.phase) + d.sigma * noise

    def step(self, state, action, rng):
        return env_step(self, state, action, rng)

    def behavior_action(self, state, rng):
        batch = np.shape(state.m)[:-1]
        return behavior_policy(self.n_actions, self.a_max, rng, batch)

    def stack_states(self, states):
        return ResourceState(np.stack([s.m for s in states]), np.stack([s.tbar for s in states]))

    def clip_action(self, u):
        return np.clip(u, -1.0, 1.0)

    def realized_params(self):
        return {"kind": "resource", "demand": self.demand.to_dict(),
                "m_box": [self.m_min, self.m_max], "a_max": self.a_max, "dt": self.dt,
                "m0": self.m0.tolist(), "tbar0": self.tbar0.tolist(),
                "reward_scale": self.reward_scale,
                "edges": [list(e) for e in self.edges]}


def env_step(env, state, action, rng):
    """Advance the resource network one sampling interval.

    Returns the next :class:`ResourceState` and the per-agent rewards, which
    are evaluated on the post-transition resource levels.
    """
    action = np.asarray(action, dtype=float)
    if action.shape[-1:] != (env.n_actions,):
        raise ContractError(f"action must have {env.n_actions} edge components")
    if np.any(action < 0.0) or np.any(action > env.a_max) or not np.all(np.isfinite(action)):
        raise ContractError(f"transfers must lie in [0, {env.a_max}]")
    demand = env.demand_at(state.tbar, rng)
    m = state.m + action @ env._flow - demand
    m = np.clip(m, env.m_min, env.m_max)
    period = env.demand.period
    tbar = state.tbar + env.dt
    tbar = np.where(tbar >= period / 2, tbar - period, tbar)
    return ResourceState(m, tbar), reward_fn(m)


def behavior_policy(n_actions, a_max, rng, batch=()):
    """State-independent exploration: every transfer i.i.d. uniform on [0, a_max]."""
    return rng.uniform(0.0, a_max, size=tuple(batch) + (n_actions,))


def make_resource_env(graph, params_seed=0, amplitude=(5.0, 15.0), omega=(0.05, 0.2),
                      noise_frac=0.1, **kwargs):
    rng = np.random.default_rng(params_seed)
    demand = DemandModel.random(graph.n, rng, amplitude, omega, noise_frac)
    return ResourceEnv(graph, demand, **kwargs)


# --------------------------------------------------------------------------
# enumerable MDP


class EnumerableMDP:
    """Finite MDP embedded in continuous coordinates.

    Parameters
    ----------
    states : array, shape (S, state_dim)
        Coordinates fed to the feature map for each discrete state.
    actions : array, shape (A, n_a)
        Action vectors (learner coordinates).
    beta : array, shape (S, A)
        Behaviour policy probabilities.
    P : array, shape (S, A, S)
        Transition probabilities.
    R : array, shape (S, A) or (S, A, N)
        Expected reward tables, one per agent when 3-d.
    """

    action_scale = 1.0
    action_offset = 0.0
    reward_scale = 1.0

    def __init__(self, states, actions, beta, P, R):
        self.states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.asarray(actions, dtype=float)
        self.actions = actions[:, None] if actions.ndim == 1 else actions
        self.beta = np.asarray(beta, dtype=float)
        self.P = np.asarray(P, dtype=float)
        R = np.asarray(R, dtype=float)
        self.R = R[..., None] if R.ndim == 2 else R
        S, A = len(self.states), len(self.actions)
        if S > 10 or A > 4:
            raise ContractError("enumerable MDPs are limited to 10 states and 4 actions")
        if self.beta.shape != (S, A) or self.P.shape != (S, A, S) or self.R.shape[:2] != (S, A):
            raise ContractError("inconsistent table shapes")
        if np.any(self.beta < 0) or not np.allclose(self.beta.sum(axis=1), 1.0, atol=1e-12):
            raise ContractError("behaviour probabilities must be stochastic rows")
        if np.any(self.P < 0) or not np.allclose(self.P.sum(axis=2), 1.0, atol=1e-12):
            raise ContractError("transition rows must be stochastic")
        if not self.is_ergodic():
            raise ContractError("behaviour chain must be irreducible and aperiodic")
        self._beta_cdf = np.cumsum(self.beta, axis=1)
        self._P_cdf = np.cumsum(self.P, axis=2)

    @property
    def n_agents(self):
        return self.R.shape[2]

    def behavior_chain(self):
        """State-to-state transition matrix under the behaviour policy."""
        return np.einsum("sa,sat->st", self.beta, self.P)

    def is_ergodic(self):
        # primitive iff some power is strictly positive; Wielandt bound on the power
        n = len(self.states)
        pattern = (self.behavior_chain() > 0).astype(float)
        power = np.linalg.matrix_power(pattern, (n - 1) ** 2 + 1)
        return bool(np.all(power > 0))

    def stationary_distribution(self):
        vals, vecs = np.linalg.eig(self.behavior_chain().T)
        k = int(np.argmin(np.abs(vals - 1.0)))
        d = np.real(vecs[:, k])
        return d / d.sum()

    def reward(self, s, a, agent_id=0):
        return float(self.R[s, a, agent_id])

    def sample(self, s, rng):
        """Draw ``(action index, next state index)`` under the behaviour policy."""
        u = rng.random(2)
        a = min(int(np.searchsorted(self._beta_cdf[s], u[0], side="right")), len(self.actions) - 1)
        s_next = min(int(np.searchsorted(self._P_cdf[s, a], u[1], side="right")),
                     len(self.states) - 1)
        return a, s_next


def chain_mdp(states, actions, beta, P, R):
    return EnumerableMDP(states, actions, beta, P, R)


# --------------------------------------------------------------------------
# quadratic toy task


class QuadraticToyEnv:
    """Scalar task with i.i.d. uniform states on [-1, 1] and reward
    ``r_i = -c_i (a - k_i s)^2`` for agent ``i``.

    Transitions ignore the action, so the behaviour state distribution is
    uniform for every policy and ``J_beta(theta)`` is a quadratic with an
    exact gradient (see :meth:`objective` and :meth:`gradient`).
    """

    action_scale = 1.0
    action_offset = 0.0
    reward_scale = 1.0
    n_actions = 1
    obs_dim = 1

    def __init__(self, targets=(1.0, -0.5), weights=None, behavior_width=1.5):
        self.targets = np.asarray(targets, dtype=float)
        self.weights = (np.ones_like(self.targets) if weights is None
                        else np.asarray(weights, dtype=float))
        if self.weights.shape != self.targets.shape or np.any(self.weights <= 0):
            raise ConfigError("toy weights must be positive, one per target")
        self.behavior_width = float(behavior_width)
        self.n_agents = self.targets.size

    def reward_bound(self):
        reach = self.behavior_width + np.abs(self.targets).max()
        return float(self.weights.max() * reach ** 2)

    def obs_box(self):
        return -np.ones(1), np.ones(1)

    def initial_state(self, batch=None, rng=None):
        if rng is None:
            raise ContractError("the toy task draws its initial state; pass a seeded rng")
        shape = (1,) if batch is None else (batch, 1)
        return rng.uniform(-1.0, 1.0, size=shape)

    def observe(self, state):
        return np.asarray(state, dtype=float)

    def step(self, state, action, rng):
        action = np.asarray(action, dtype=float)
        err = action - self.targets * state
        rewards = -self.weights * err ** 2
        return rng.uniform(-1.0, 1.0, size=np.shape(state)), rewards

    def behavior_action(self, state, rng):
        return rng.uniform(-self.behavior_width, self.behavior_width, size=np.shape(state))

    def stack_states(self, states):
        return np.stack(states)

    def clip_action(self, a):
        return a

    def realized_params(self):
        return {"kind": "toy", "targets": self.targets.tolist(),
                "weights": self.weights.tolist(), "behavior_width": self.behavior_width}

    # closed forms, by Gauss-Legendre quadrature over s ~ U[-1, 1]

    def _moments(self, fmap, n_nodes=64):
        from .features import eval_features
        x, wq = np.polynomial.legendre.leggauss(n_nodes)
        phi = eval_features(fmap, x[:, None])
        wq = wq / 2.0
        Phi = (phi * wq[:, None]).T @ phi          # E[phi phi^T]
        phis = (phi * (wq * x)[:, None]).sum(0)    # E[phi s]
        ss = float(np.sum(wq * x * x))             # E[s^2]
        return Phi, phis, ss

    def objective(self, fmap, theta, gamma):
        """Exact ``J_beta(theta) = E_s[sum_i r_i(s, pi(s))] / (1 - gamma)``."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        Phi, phis, ss = self._moments(fmap)
        per_step = -np.sum(self.weights * (theta @ Phi @ theta - 2 * self.targets * (phis @ theta)
                                           + self.targets ** 2 * ss))
        return float(per_step / (1.0 - gamma))

    def gradient(self, fmap, theta, gamma):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        Phi, phis, _ = self._moments(fmap)
        c = self.weights
        g = -2.0 * (c.sum() * (Phi @ theta) - (c * self.targets).sum() * phis)
        return (g / (1.0 - gamma)).reshape(-1, 1)

    def optimum(self, fmap):
        Phi, phis, _ = self._moments(fmap)
        kbar = float((self.weights * self.targets).sum() / self.weights.sum())
        return np.linalg.solve(Phi, kbar * phis).reshape(-1, 1)


def to_learner_action(env, a):
    a = np.asarray(a, dtype=float)
    if env.action_scale == 0:
        return np.zeros_like(a)
    return (a - env.action_offset) / env.action_scale


def to_physical_action(env, u):
    return env.action_offset + env.action_scale * env.clip_action(u)


def behavior_states(env, n, rng, burn_in=50, thin=1):
    """Collect ``n`` states visited by the behaviour policy after a burn-in."""
    state = env.initial_state(rng=rng)
    out = []
    total = burn_in + n * thin
    for t in range(total):
        a = env.behavior_action(state, rng)
        state, _ = env.step(state, a, rng)
        if t >= burn_in and (t - burn_in) % thin == 0:
            out.append(state)
    return env.stack_states(out)

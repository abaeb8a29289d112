"""Per-agent off-policy policy evaluation.

Each agent fits a linear action-value model

    Q_i(s, a) = phi_w(s, a)^T w + phi_v(s)^T v

where ``phi_w`` are the compatible advantage features of the agent's own
policy and ``phi_v`` is the shared RBF basis used as a state-value baseline.
Weights are learned with a TDC-style gradient TD update using one correction
vector ``u`` over the stacked features ``psi = [phi_w; phi_v]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, PoisonedCriticError, SingularSystemError
from .features import compatible_features_from_phi, eval_features


@dataclass(frozen=True)
class CriticState:
    w: np.ndarray
    v: np.ndarray
    u: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        v = np.asarray(self.v, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if w.ndim != 1 or v.ndim != 1 or u.shape != (w.size + v.size,):
            raise ContractError(
                f"u must match the stacked feature length {w.size + v.size}, got {u.shape}")
        if self.step_count < 0:
            raise ContractError("step_count must be non-negative")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)

    @classmethod
    def zeros(cls, n_features, n_actions, n_baseline=None):
        n_baseline = n_features if n_baseline is None else n_baseline
        nw = n_features * n_actions
        return cls(np.zeros(nw), np.zeros(n_baseline), np.zeros(nw + n_baseline), 0)

    @property
    def z(self):
        return np.concatenate([self.w, self.v])

    def advantage_matrix(self, n_features):
        """``w`` reshaped to ``(n_theta, n_a)`` (inverse of column-major flattening)."""
        return self.w.reshape((n_features, -1), order="F")

    def is_finite(self):
        return bool(np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.v))
                    and np.all(np.isfinite(self.u)))

    def to_dict(self):
        return {"w": self.w.tolist(), "v": self.v.tolist(), "u": self.u.tolist(),
                "step_count": self.step_count}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["w"], dtype=float), np.array(d["v"], dtype=float),
                   np.array(d["u"], dtype=float), int(d["step_count"]))


@dataclass(frozen=True)
class Transition:
    """One observed step ``(s, a, r_1..r_N, s')`` as seen by the learners.

    ``s`` and ``s_next`` are observation vectors fed to the feature map and
    ``a`` is the action in the learner's (normalised) coordinates.
    """

    s: np.ndarray
    a: np.ndarray
    rewards: np.ndarray
    s_next: np.ndarray
    t: int = 0
    r_max: float = None

    def __post_init__(self):
        rewards = np.atleast_1d(np.asarray(self.rewards, dtype=float))
        if rewards.ndim != 1:
            raise ContractError("rewards must be a flat per-agent list")
        if not np.isfinite(rewards).all():
            raise ContractError(f"non-finite reward at t={self.t}")
        if self.r_max is not None and (np.abs(rewards) > self.r_max).any():
            raise ContractError(f"reward exceeds bound {self.r_max} at t={self.t}")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "s_next", np.asarray(self.s_next, dtype=float))

    @property
    def n_agents(self):
        return self.rewards.size


def _check_dims(critic, params, n_baseline):
    n_theta, n_a = params.theta.shape
    if critic.w.size != n_theta * n_a or critic.v.size != n_baseline:
        raise ContractError(
            f"critic sized ({critic.w.size}, {critic.v.size}) does not match "
            f"policy ({n_theta}x{n_a}) and baseline {n_baseline}")


def q_value(critic, fmap, s, a, params):
    phi = eval_features(fmap, s)
    _check_dims(critic, params, phi.size)
    psi_w = compatible_features_from_phi(phi, a, params)
    return float(psi_w @ critic.w + phi @ critic.v)


def td_error(critic, fmap, transition, params, gamma, agent_id=None):
    """``r_i + gamma * Q(s', pi(s')) - Q(s, a)``.

    The advantage term of ``Q(s', pi(s'))`` is identically zero, so only the
    baseline contributes at the successor state.
    """
    if not 0.0 <= gamma < 1.0:
        raise ContractError(f"discount must lie in [0, 1), got {gamma}")
    agent_id = params.agent_id if agent_id is None else agent_id
    phi = eval_features(fmap, transition.s)
    phi_next = eval_features(fmap, transition.s_next)
    _check_dims(critic, params, phi.size)
    psi = np.concatenate([compatible_features_from_phi(phi, transition.a, params), phi])
    r = transition.rewards[agent_id]
    return float(r + gamma * (phi_next @ critic.v) - psi @ critic.z)


def gtd_update(z, u, psi, phi_next, n_w, r, gamma, alpha_w, alpha_u):
    """Raw stacked TDC update on flat arrays; returns ``(z, u, delta)``.

    ``phi_next`` is the baseline block of the successor features; the
    advantage block of the successor is a structural zero.
    """
    delta = r + gamma * (phi_next @ z[n_w:]) - psi @ z
    psi_u = psi @ u
    step = delta * psi
    step[n_w:] -= gamma * phi_next * psi_u
    z_new = z + alpha_w * step
    u_new = u + alpha_u * (delta - psi_u) * psi
    return z_new, u_new, delta


def gtd_step(critic, fmap, transition, params, gamma, alpha_w, alpha_u, agent_id=None,
             *, phi=None, phi_next=None):
    """One TDC update for one agent, returning a new :class:`CriticState`.

    ``phi``/``phi_next`` may be passed when the caller has already evaluated
    the shared basis at ``s`` and ``s'``. Only ``transition.rewards[agent_id]``
    is read.
    """
    if alpha_w <= 0 or alpha_u <= 0:
        raise ContractError("step sizes must be positive")
    if not 0.0 <= gamma < 1.0:
        raise ContractError(f"discount must lie in [0, 1), got {gamma}")
    agent_id = params.agent_id if agent_id is None else agent_id
    if phi is None:
        phi = eval_features(fmap, transition.s)
    if phi_next is None:
        phi_next = eval_features(fmap, transition.s_next)
    _check_dims(critic, params, phi.size)
    psi = np.concatenate([compatible_features_from_phi(phi, transition.a, params), phi])
    r = transition.rewards[agent_id]
    n_w = critic.w.size
    z, u, delta = gtd_update(critic.z, critic.u, psi, phi_next, n_w, r, gamma, alpha_w, alpha_u)
    if not (np.isfinite(z).all() and np.isfinite(u).all()):
        raise PoisonedCriticError(
            f"critic of agent {agent_id} became non-finite at transition {transition.t}",
            step=transition.t, agent=agent_id,
            detail={"reward": float(r), "td_error": float(delta)})
    return CriticState(z[:n_w], z[n_w:], u, critic.step_count + 1)


def _stacked_features(fmap, params, s, a):
    phi = eval_features(fmap, s)
    return np.concatenate([compatible_features_from_phi(phi, a, params), phi]), phi


def td_system(mdp, fmap, params, gamma, agent_id=0):
    """Exact ``A = E[psi (psi - gamma psi')^T]``, ``b = E[r psi]`` and
    ``C = E[psi psi^T]`` under the behaviour policy's stationary distribution,
    assembled by enumeration over (s, a, s')."""
    d = mdp.stationary_distribution()
    n_w = params.theta.size
    n = n_w + fmap.n_features
    A = np.zeros((n, n))
    b = np.zeros(n)
    C = np.zeros((n, n))
    succ = [np.concatenate([np.zeros(n_w), eval_features(fmap, x)]) for x in mdp.states]
    for si, s in enumerate(mdp.states):
        for ai, a in enumerate(mdp.actions):
            p_sa = d[si] * mdp.beta[si, ai]
            if p_sa == 0.0:
                continue
            psi, _ = _stacked_features(fmap, params, s, a)
            exp_next = sum(mdp.P[si, ai, sj] * succ[sj] for sj in range(len(mdp.states)))
            A += p_sa * np.outer(psi, psi - gamma * exp_next)
            b += p_sa * mdp.reward(si, ai, agent_id) * psi
            C += p_sa * np.outer(psi, psi)
    return A, b, C


def fixed_point_oracle(mdp, fmap, params, gamma, agent_id=0, cond_limit=1e12):
    """TD fixed point ``z* = A^{-1} b`` of the stacked critic for a fixed policy."""
    if len(mdp.states) * len(mdp.actions) > 1000:
        raise ContractError("MDP too large to enumerate")
    A, b, _ = td_system(mdp, fmap, params, gamma, agent_id)
    if np.linalg.cond(A) > cond_limit:
        raise SingularSystemError("TD matrix A is singular for this policy; pick another theta")
    return np.linalg.solve(A, b)


def expected_update(mdp, fmap, params, gamma, z, u, agent_id=0):
    """Expected TDC displacement ``(dz, du)`` at ``(z, u)`` with unit steps."""
    d = mdp.stationary_distribution()
    n_w = params.theta.size
    dz = np.zeros_like(z)
    du = np.zeros_like(u)
    for si, s in enumerate(mdp.states):
        for ai, a in enumerate(mdp.actions):
            psi, _ = _stacked_features(fmap, params, s, a)
            for sj, s_next in enumerate(mdp.states):
                p = d[si] * mdp.beta[si, ai] * mdp.P[si, ai, sj]
                if p == 0.0:
                    continue
                phi_next = eval_features(fmap, s_next)
                z1, u1, _ = gtd_update(z, u, psi, phi_next, n_w,
                                       mdp.reward(si, ai, agent_id), gamma, 1.0, 1.0)
                dz += p * (z1 - z)
                du += p * (u1 - u)
    return dz, du

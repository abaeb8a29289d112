"""Local off-policy policy gradients and the consensus actor step."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, PoisonedActorError
from .features import PolicyParams, eval_features
from .network import check_weight_matrix


@dataclass(frozen=True)
class PolicyEnsemble:
    """All agents' local policy matrices, stacked as ``(N, n_theta, n_a)``."""

    thetas: np.ndarray

    def __post_init__(self):
        thetas = np.array(self.thetas, dtype=float)
        if thetas.ndim != 3:
            raise ContractError("ensemble must be stacked as (N, n_theta, n_a)")
        thetas.flags.writeable = False
        object.__setattr__(self, "thetas", thetas)

    @classmethod
    def from_params(cls, params):
        shapes = {p.theta.shape for p in params}
        if len(shapes) != 1:
            raise ContractError(f"agents disagree on policy shape: {shapes}")
        return cls(np.stack([p.theta for p in params]))

    @classmethod
    def replicate(cls, theta, n_agents):
        theta = np.asarray(theta, dtype=float)
        return cls(np.broadcast_to(theta, (n_agents,) + theta.shape))

    @property
    def n_agents(self):
        return self.thetas.shape[0]

    @property
    def n_features(self):
        return self.thetas.shape[1]

    @property
    def n_actions(self):
        return self.thetas.shape[2]

    @property
    def params(self):
        return [PolicyParams(t, i) for i, t in enumerate(self.thetas)]

    def flat(self):
        """Stacked vector ``[theta_1; ...; theta_N]`` of column-major flattenings."""
        return np.concatenate([t.ravel(order="F") for t in self.thetas])

    def to_list(self):
        return self.thetas.tolist()


def local_policy_gradient(fmap, s, critic, *, phi=None):
    """Sampled ``grad pi(s) grad pi(s)^T w_i`` as an ``(n_theta, n_a)`` matrix."""
    if phi is None:
        phi = eval_features(fmap, s)
    n = phi.shape[0]
    if critic.w.size % n:
        raise ContractError(f"critic weights of length {critic.w.size} do not fit {n} features")
    W = critic.w.reshape((n, -1), order="F")
    return np.outer(phi, phi @ W)


def consensus_step(ensemble, gradients, W, alpha, *, graph=None, channel=None):
    """Mix the neighbours' locally updated parameters.

    Each agent ``j`` forms the message ``theta_j + alpha * g_j``; agent ``i``
    then takes ``sum_j W_ij * message_j`` over the nonzero entries of row
    ``i``. If a :class:`~dacrl.network.Channel` is given every message read
    goes through it, which enforces and records locality.
    """
    if alpha < 0:
        raise ContractError("actor step size must be non-negative")
    W = check_weight_matrix(W, graph)
    N = ensemble.n_agents
    if W.shape != (N, N):
        raise ContractError(f"weight matrix is {W.shape}, ensemble has {N} agents")
    g = np.asarray(gradients, dtype=float)
    if g.shape != ensemble.thetas.shape:
        raise ContractError(f"gradients have shape {g.shape}, expected {ensemble.thetas.shape}")
    messages = ensemble.thetas + alpha * g
    out = np.empty_like(messages)
    for i in range(N):
        acc = np.zeros(messages.shape[1:])
        for j in np.flatnonzero(W[i]):
            msg = messages[j] if channel is None else channel.deliver(j, i, messages[j], "policy")
            acc = acc + W[i, j] * msg
        out[i] = acc
    if not np.all(np.isfinite(out)):
        bad = sorted({int(i) for i in np.argwhere(~np.isfinite(out))[:, 0]})
        raise PoisonedActorError(f"policy parameters became non-finite for agents {bad}",
                                 agent=bad)
    return PolicyEnsemble(out)


def mean_policy(ensemble):
    return PolicyParams(ensemble.thetas.mean(axis=0), agent_id=-1)


def disagreement_norm(ensemble):
    """``|| theta - 1 (x) theta_bar ||_2`` over all flattened parameters."""
    centered = ensemble.thetas - ensemble.thetas.mean(axis=0)
    return float(np.sqrt(np.sum(centered * centered)))


def max_pairwise_distance(ensemble):
    th = ensemble.thetas.reshape(ensemble.n_agents, -1)
    diff = th[:, None, :] - th[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())

"""Gaussian radial basis features, linear deterministic policies and
compatible advantage features.

Policy parameters are stored as an ``(n_theta, n_a)`` matrix. Whenever a flat
vector is needed (critic weights, consensus messages) the matrix is flattened
column-major, so the flat layout is ``n_a`` consecutive blocks of length
``n_theta``, one per action component.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class RbfFeatureMap:
    """Fixed set of Gaussian bumps shared by every agent.

    Attributes
    ----------
    centers : ndarray, shape (n_theta, state_dim)
    widths : ndarray, shape (n_theta,)
        Strictly positive standard deviations.
    """

    centers: np.ndarray
    widths: np.ndarray
    _scale: np.ndarray = field(init=False, repr=False, compare=False)
    _inv2var: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float, ndmin=2)
        widths = np.array(self.widths, dtype=float, ndmin=1)
        if centers.ndim != 2:
            raise ContractError("centers must be a 2-d array")
        if widths.shape != (centers.shape[0],):
            raise ContractError(
                f"need one width per center, got {widths.shape} widths for "
                f"{centers.shape[0]} centers")
        if not np.all(widths > 0) or not np.all(np.isfinite(widths)):
            raise ContractError("widths must be finite and strictly positive")
        if not np.all(np.isfinite(centers)):
            raise ContractError("centers must be finite")
        centers.flags.writeable = False
        widths.flags.writeable = False
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "_scale", 1.0 / np.sqrt(2.0 * np.pi * widths ** 2))
        object.__setattr__(self, "_inv2var", 1.0 / (2.0 * widths ** 2))

    @property
    def n_features(self):
        return self.centers.shape[0]

    @property
    def state_dim(self):
        return self.centers.shape[1]

    @property
    def peak_values(self):
        """Per-feature supremum ``1/sqrt(2 pi sigma_k^2)``."""
        return self._scale.copy()

    def norm_bound(self):
        """Uniform bound on ``||phi(s)||`` over all states."""
        return float(np.sum(self._scale))

    @classmethod
    def random(cls, n_features, low, high, width, seed=None):
        """Centers uniform over the box ``[low, high]``, one shared width."""
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        if low.shape != high.shape or np.any(high < low):
            raise ContractError("invalid state box")
        rng = np.random.default_rng(seed)
        centers = rng.uniform(low, high, size=(n_features,) + low.shape)
        return cls(centers, np.full(n_features, float(width)))

    def to_dict(self):
        return {"centers": self.centers.tolist(), "widths": self.widths.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["centers"], dtype=float), np.array(d["widths"], dtype=float))


@dataclass(frozen=True)
class PolicyParams:
    theta: np.ndarray
    agent_id: int = 0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        if theta.ndim != 2:
            raise ContractError("theta must be an (n_theta, n_a) matrix")
        if not np.all(np.isfinite(theta)):
            raise ContractError(f"non-finite policy parameters for agent {self.agent_id}")
        object.__setattr__(self, "theta", theta)

    @property
    def shape(self):
        return self.theta.shape

    def flat(self):
        return self.theta.ravel(order="F")

    @classmethod
    def zeros(cls, n_features, n_actions, agent_id=0):
        return cls(np.zeros((n_features, n_actions)), agent_id)


def eval_features(fmap, s):
    """Evaluate every basis function at ``s``.

    ``s`` may be a single state of shape ``(state_dim,)`` or a batch of shape
    ``(..., state_dim)``; the output has the same leading shape with a trailing
    axis of length ``n_theta``.
    """
    s = np.asarray(s, dtype=float)
    if s.shape[-1:] != (fmap.state_dim,):
        raise ContractError(
            f"state has trailing dimension {s.shape[-1:]}, expected {fmap.state_dim}")
    diff = s[..., None, :] - fmap.centers
    sq = np.einsum("...kd,...kd->...k", diff, diff)
    return fmap._scale * np.exp(-sq * fmap._inv2var)


def policy_action(params, phi):
    """Deterministic action ``theta^T phi``."""
    theta = params.theta if isinstance(params, PolicyParams) else np.asarray(params)
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != theta.shape[0]:
        raise ContractError(
            f"feature length {phi.shape[-1]} does not match theta rows {theta.shape[0]}")
    return phi @ theta


@dataclass(frozen=True)
class PolicyJacobian:
    """Implicit ``grad_theta pi(s)`` for a linear policy.

    Column-major flattened theta makes the Jacobian block diagonal with
    ``n_a`` copies of ``phi``; only ``phi`` is stored.
    """

    phi: np.ndarray
    n_actions: int

    @property
    def shape(self):
        return (self.phi.shape[0] * self.n_actions, self.n_actions)

    def matvec(self, x):
        """``grad_theta pi(s) @ x`` for ``x`` in action space (flat, length n_theta*n_a)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_actions,):
            raise ContractError(f"expected action-space vector of length {self.n_actions}")
        return np.outer(self.phi, x).ravel(order="F")

    def rmatvec(self, w):
        """``grad_theta pi(s)^T @ w`` for flat parameter-space ``w``."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.shape[0],):
            raise ContractError(f"expected parameter vector of length {self.shape[0]}")
        return self.phi @ w.reshape((self.phi.shape[0], self.n_actions), order="F")

    def dense(self):
        n = self.phi.shape[0]
        J = np.zeros(self.shape)
        for k in range(self.n_actions):
            J[k * n:(k + 1) * n, k] = self.phi
        return J


def policy_jacobian(fmap, s, n_actions):
    return PolicyJacobian(eval_features(fmap, s), int(n_actions))


def compatible_features_from_phi(phi, a, params):
    """Same as :func:`compatible_features` with the basis already evaluated."""
    theta = params.theta
    a = np.asarray(a, dtype=float)
    if a.shape != (theta.shape[1],):
        raise ContractError(f"action has shape {a.shape}, expected ({theta.shape[1]},)")
    # column-major flattening of outer(phi, a - pi): action-major blocks of phi
    return ((a - phi @ theta)[:, None] * phi).ravel()


def compatible_features(fmap, s, a, params):
    """Advantage features ``grad_theta pi(s) (a - pi(s))``, flattened column-major."""
    return compatible_features_from_phi(eval_features(fmap, s), a, params)

"""Stochastic mini-batch ICP: cost, analytic gradients, Adam, and the
single-estimate optimizer.

Cost over a set of matched pairs (s_i source, r_i reference, optional unit
normal n_i at r_i), with residual e_i = R s_i + u - r_i:

    point-to-point:  (1/N) sum ||e_i||^2
    point-to-plane:  (1/N) sum (n_i . e_i)^2

The update-rule gradients follow the half-quadratic convention, dropping
the factor 2 that the chain rule would add (it is absorbed into the step
size): per batch of m pairs,

    g[0:3] = (1/m) sum p_i
    g[3:6][k] = (1/m) sum p_i . (dR/dtheta_k s_i)

with p_i = e_i for point-to-point and p_i = n_i (n_i . e_i) for
point-to-plane. Equivalently, g is the exact gradient of half the batch
cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .correspondence import MiniBatch
from .errors import InputError
from .geometry import Pose6D, rotation_from_euler, rotation_partials

__all__ = [
    "IcpConfig",
    "AdamState",
    "adam_step",
    "residual_cost",
    "batch_gradients",
    "run_sgd_icp",
]

METRICS = ("point", "plane")


@dataclass(frozen=True)
class IcpConfig:
    """Knobs for one SGD-ICP run (also the base of the Stein config).

    likelihood_scale multiplies the batch gradient before the optimizer
    step; None means "use the source cloud size", which puts the gradient
    on the scale of a data log-likelihood. Adam normalizes that scale away;
    the plain "sgd" optimizer with likelihood_scale=1.0 exposes the literal
    textbook update theta <- theta - eta * g.
    """

    metric: str = "point"
    batch_size: int = 300
    step_size: float = 0.01
    iterations: int = 100
    max_dist: float | None = None
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    likelihood_scale: float | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InputError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.step_size <= 0:
            raise InputError(f"step_size must be positive, got {self.step_size}")
        if self.iterations < 1:
            raise InputError(f"iterations must be >= 1, got {self.iterations}")
        if self.optimizer not in ("adam", "sgd"):
            raise InputError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InputError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise InputError("eps must be positive")
        if self.max_dist is not None and self.max_dist < 0:
            raise InputError("max_dist must be non-negative")
        if self.likelihood_scale is not None and self.likelihood_scale < 0:
            raise InputError("likelihood_scale must be non-negative")
        if self.workers < 1:
            raise InputError("workers must be >= 1")


# --------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators. Works elementwise, so the same code
    serves a single 6-vector or a stacked (K, 6) block of particles."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape=(6,)) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0)


def adam_step(state: AdamState, grad: np.ndarray, step_size: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update for a descent gradient.

    Returns (delta, new_state) where delta = -step_size * mhat / (sqrt(vhat) + eps).
    """
    grad = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    delta = -step_size * mhat / (np.sqrt(vhat) + eps)
    return delta, AdamState(m=m, v=v, t=t)


# --------------------------------------------------------------------------
# Cost and gradients


def _residuals(pairs: MiniBatch, pose) -> np.ndarray:
    p = pose.to_array() if isinstance(pose, Pose6D) else np.asarray(pose, dtype=float).reshape(6)
    R = rotation_from_euler(p[3], p[4], p[5])
    return pairs.source_points @ R.T + p[:3] - pairs.reference_points


def _require_normals(pairs: MiniBatch) -> np.ndarray:
    if pairs.reference_normals is None:
        raise InputError("point-to-plane metric needs matched reference normals")
    return pairs.reference_normals


def residual_cost(pairs: MiniBatch, pose, metric: str = "point") -> float:
    """Mean squared residual of the matched pairs at the given pose."""
    if len(pairs) == 0:
        raise InputError("cannot evaluate cost on an empty batch")
    e = _residuals(pairs, pose)
    if metric == "point":
        return float(np.mean(np.sum(e * e, axis=1)))
    if metric == "plane":
        n = _require_normals(pairs)
        proj = np.einsum("ij,ij->i", n, e)
        return float(np.mean(proj * proj))
    raise InputError(f"unknown metric {metric!r}")


def batch_gradients(pairs: MiniBatch, pose, metric: str = "point") -> np.ndarray:
    """Half-quadratic gradient of the batch cost, as a 6-vector.

    See the module docstring for the exact form; the finite-difference
    identity is g = d(cost/2)/d(pose).
    """
    if len(pairs) == 0:
        raise InputError("cannot evaluate gradients on an empty batch")
    p = pose.to_array() if isinstance(pose, Pose6D) else np.asarray(pose, dtype=float).reshape(6)
    e = _residuals(pairs, p)
    if metric == "plane":
        n = _require_normals(pairs)
        e = n * np.einsum("ij,ij->i", n, e)[:, None]
    elif metric != "point":
        raise InputError(f"unknown metric {metric!r}")
    partials = rotation_partials(p[3], p[4], p[5])         # (3, 3, 3)
    g = np.empty(6)
    g[:3] = e.mean(axis=0)
    # rot component k: mean_i e_i . (dR/dtheta_k s_i)
    g[3:] = np.einsum("mi,kij,mj->k", e, partials, pairs.source_points) / len(pairs)
    return g


# --------------------------------------------------------------------------
# Full run


def run_sgd_icp(source: PointCloud, reference: PointCloud, init: Pose6D,
                config: IcpConfig):
    """Register source onto reference starting from a single pose estimate.

    Runs the shared particle engine with one particle and no prior, so a
    one-particle Stein run under the same seed reproduces this trajectory
    exactly. Returns (pose, diagnostics); diagnostics carries per-iteration
    cost and the full parameter trace.
    """
    from .stein import UNIFORM_PRIOR, run_particle_engine

    init_arr = init.to_array() if isinstance(init, Pose6D) else np.asarray(init, float).reshape(6)
    result = run_particle_engine(
        source=source,
        reference=reference,
        particles=init_arr.reshape(1, 6),
        config=config,
        prior=UNIFORM_PRIOR,
        interacting=True,
        record_trace=True,
    )
    pose = Pose6D.from_array(result.particles[0])
    return pose, IcpDiagnostics(cost_trace=result.cost_trace,
                                pose_trace=result.particle_trace[:, 0, :])


@dataclass(frozen=True)
class IcpDiagnostics:
    """Per-iteration cost and pose trace of a single-estimate run."""

    cost_trace: np.ndarray   # (T,)
    pose_trace: np.ndarray   # (T + 1, 6) includes the initial pose

    def rows(self):
        """Iterator of (iteration, cost, pose 6-vector) for CSV export."""
        for t in range(len(self.cost_trace)):
            yield t, float(self.cost_trace[t]), self.pose_trace[t + 1]

"""Stein variational registration.

A population of K pose particles descends the mini-batch ICP cost while a
kernel couples them: each particle is attracted along the consensus of the
scaled cost gradients (plus an optional prior) and repelled from its
neighbors by the kernel gradient. The stationary population approximates
the pose posterior; K = 1 with no prior degenerates to plain SGD-ICP.

Blocks are treated separately: translations use a squared-exponential
kernel on Euclidean distance, rotations use the same form on wrapped
angle differences so that nearly-equal angles across the +-pi seam count
as close. Each block gets its own median-heuristic bandwidth, recomputed
every iteration.

Particles are plain (K, 6) float64 arrays ordered (x, y, z, roll, pitch,
yaw); `ParticleSet` is an alias documenting that contract.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dataclass_fields

import numpy as np

from .cloud import PointCloud
from .correspondence import build_index
from .errors import DivergedError, InputError, MatchRejectionError
from .evaluation import PoseDistribution
from .geometry import rotation_from_euler, rotation_partials, wrap_angle
from .sgd import IcpConfig

__all__ = [
    "ParticleSet",
    "SteinConfig",
    "PriorConfig",
    "UNIFORM_PRIOR",
    "translation_kernel",
    "rotation_kernel",
    "median_bandwidth",
    "prior_gradient",
    "stein_direction",
    "sample_initial_particles",
    "run_stein_icp",
    "run_particle_engine",
    "EngineResult",
]

ParticleSet = np.ndarray  # (K, 6) float64, one pose per row

# Sub-stream labels under the run seed; keeps every random draw addressable.
_STREAM_INIT = 0
_STREAM_PARTICLE = 1
_STREAM_SHARED = 3

_BANDWIDTH_FLOOR = 1e-8


@dataclass(frozen=True)
class SteinConfig(IcpConfig):
    """Stein run parameters on top of the base ICP knobs.

    init_center / trans_range / rot_range define per-dimension uniform
    init intervals center +- range (ranges may be scalars or 3-sequences).
    bandwidth is "median" or a fixed positive float used for both blocks.
    direction_sum switches the particle aggregation from the default mean
    to a plain sum; repulsion=False drops the kernel-gradient term (the
    deliberately collapsed baseline used in evaluations).
    """

    particles: int = 100
    bandwidth: object = "median"
    repulsion: bool = True
    direction_sum: bool = False
    shared_batch: bool = False
    init_center: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    trans_range: object = 1.0
    rot_range: object = 0.1745

    def __post_init__(self):
        super().__post_init__()
        if self.particles < 1:
            raise InputError(f"particles must be >= 1, got {self.particles}")
        if not (self.bandwidth == "median"
                or (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0)):
            raise InputError("bandwidth must be 'median' or a positive number")
        if len(tuple(self.init_center)) != 6:
            raise InputError("init_center must have 6 entries")
        _as_range(self.trans_range)
        _as_range(self.rot_range)

    def init_bounds(self) -> np.ndarray:
        """Per-dimension [lo, hi] bounds, shape (6, 2)."""
        center = np.asarray(self.init_center, dtype=float)
        half = np.concatenate([_as_range(self.trans_range), _as_range(self.rot_range)])
        return np.stack([center - half, center + half], axis=1)


def _as_range(r) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(r, dtype=float))
    if arr.shape == (1,):
        arr = np.repeat(arr, 3)
    if arr.shape != (3,):
        raise InputError(f"range must be a scalar or 3 values, got shape {arr.shape}")
    if (arr < 0).any():
        raise InputError("init ranges must be non-negative")
    return arr


# --------------------------------------------------------------------------
# Priors


@dataclass(frozen=True)
class PriorConfig:
    """Pose prior: uninformative by default.

    The informed prior is Gaussian over translations (trans_variance holds
    per-axis variances) and von Mises over each angle (kappa = 0 turns a
    dimension uniform). mean is the prior center pose.
    """

    kind: str = "uniform"
    mean: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    trans_variance: tuple = (1.0, 1.0, 1.0)
    kappa: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("uniform", "informed"):
            raise InputError(f"prior kind must be 'uniform' or 'informed', got {self.kind!r}")
        if len(tuple(self.mean)) != 6:
            raise InputError("prior mean must have 6 entries")
        tv = np.asarray(self.trans_variance, dtype=float)
        kp = np.asarray(self.kappa, dtype=float)
        if tv.shape != (3,) or (tv <= 0).any():
            raise InputError("trans_variance must be 3 positive values")
        if kp.shape != (3,) or (kp < 0).any():
            raise InputError("kappa must be 3 non-negative values")


UNIFORM_PRIOR = PriorConfig()


def prior_gradient(prior: PriorConfig, particles: np.ndarray) -> np.ndarray:
    """Gradient of the log prior density at each particle.

    Shape follows the input: (6,) -> (6,), (K, 6) -> (K, 6). The uniform
    prior contributes exactly zero.
    """
    particles = np.asarray(particles, dtype=float)
    if prior.kind == "uniform":
        return np.zeros_like(particles)
    single = particles.ndim == 1
    theta = np.atleast_2d(particles)
    mean = np.asarray(prior.mean, dtype=float)
    out = np.empty_like(theta)
    out[:, :3] = -(theta[:, :3] - mean[:3]) / np.asarray(prior.trans_variance, dtype=float)
    out[:, 3:] = -np.asarray(prior.kappa, dtype=float) * np.sin(theta[:, 3:] - mean[3:])
    return out[0] if single else out


# --------------------------------------------------------------------------
# Kernels


def translation_kernel(a, b, h: float):
    """Squared-exponential kernel on R^3: k = exp(-||a - b||^2 / h).

    Returns (k, grad) with grad the derivative in the first argument,
    grad = -(2/h) (a - b) k.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    k = float(np.exp(-np.dot(diff, diff) / h))
    return k, -(2.0 / h) * diff * k


def rotation_kernel(a, b, h: float):
    """Same form on wrapped angle differences.

    Each component difference is wrapped to [-pi, pi) before squaring, so
    angles just across the seam count as close. Gradient in the first
    argument; the wrap is locally an identity so the chain rule passes
    through (the seam itself is the usual measure-zero kink).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = wrap_angle(a - b)
    k = float(np.exp(-np.dot(diff, diff) / h))
    return k, -(2.0 / h) * diff * k


def median_bandwidth(block: np.ndarray, angular: bool = False) -> float:
    """Median heuristic: median squared pairwise distance over log K.

    One particle gives h = 1; coincident particles hit the 1e-8 floor.
    """
    block = np.atleast_2d(np.asarray(block, dtype=float))
    K = block.shape[0]
    if K < 2:
        return 1.0
    diffs = block[:, None, :] - block[None, :, :]
    if angular:
        diffs = wrap_angle(diffs)
    sq = np.sum(diffs * diffs, axis=2)
    iu = np.triu_indices(K, k=1)
    med = float(np.median(sq[iu]))
    return max(med / np.log(K), _BANDWIDTH_FLOOR)


# --------------------------------------------------------------------------
# Stein direction


def stein_direction(particles: np.ndarray, likelihood_grads: np.ndarray,
                    prior: PriorConfig, h_trans: float, h_rot: float,
                    *, average: bool = True, repulsion: bool = True) -> np.ndarray:
    """Update direction for every particle, shape (K, 6).

    For target particle i and source particles j, with driving term
    d_j = -likelihood_grads[j] + grad log prior(theta_j):

        phi[i] = agg_j ( d_j * k(theta_j, theta_i) + grad_j k(theta_j, theta_i) )

    computed blockwise (translation kernel on [:3], rotation kernel on
    [3:]). agg is the mean over j by default, the bare sum when
    average=False. repulsion=False drops the grad_j k term, which makes
    co-located particles move in lockstep and collapse.
    """
    theta = np.atleast_2d(np.asarray(particles, dtype=float))
    g = np.atleast_2d(np.asarray(likelihood_grads, dtype=float))
    if theta.shape != g.shape or theta.shape[1] != 6:
        raise InputError(f"particles {theta.shape} and gradients {g.shape} must both be (K, 6)")
    K = theta.shape[0]
    driving = -g + prior_gradient(prior, theta)

    out = np.empty_like(theta)
    for sl, h, angular in ((slice(0, 3), h_trans, False), (slice(3, 6), h_rot, True)):
        x = theta[:, sl]
        # delta[i, j] = x_j - x_i (gradient is taken in the source particle j).
        delta = x[None, :, :] - x[:, None, :]
        if angular:
            delta = wrap_angle(delta)
        kmat = np.exp(-np.sum(delta * delta, axis=2) / h)      # (K, K), symmetric
        att = kmat @ driving[:, sl]
        if repulsion:
            rep = -(2.0 / h) * np.einsum("ijc,ij->ic", delta, kmat)
            att = att + rep
        out[:, sl] = att
    if average:
        out /= K
    return out


# --------------------------------------------------------------------------
# Initialization


def sample_initial_particles(K: int, bounds: np.ndarray, rng: np.random.Generator,
                             prior: PriorConfig | None = None) -> np.ndarray:
    """Draw the starting population.

    Uniform per dimension inside bounds (shape (6, 2)) unless an informed
    prior is given, in which case translations are Gaussian and angles von
    Mises draws from that prior. Angles are wrapped either way.
    """
    if K < 1:
        raise InputError(f"K must be >= 1, got {K}")
    if prior is not None and prior.kind == "informed":
        mean = np.asarray(prior.mean, dtype=float)
        std = np.sqrt(np.asarray(prior.trans_variance, dtype=float))
        out = np.empty((K, 6))
        for d in range(3):
            out[:, d] = rng.normal(mean[d], std[d], size=K)
        for d in range(3):
            kappa = float(np.asarray(prior.kappa, dtype=float)[d])
            out[:, 3 + d] = rng.vonmises(mean[3 + d], kappa, size=K)
    else:
        bounds = np.asarray(bounds, dtype=float)
        if bounds.shape != (6, 2):
            raise InputError(f"bounds must be (6, 2), got {bounds.shape}")
        if (bounds[:, 1] < bounds[:, 0]).any():
            raise InputError("each init bound must satisfy lo <= hi")
        out = np.empty((K, 6))
        for d in range(6):
            out[:, d] = rng.uniform(bounds[d, 0], bounds[d, 1], size=K)
    out[:, 3:] = wrap_angle(out[:, 3:])
    return out


# --------------------------------------------------------------------------
# Shared particle engine


@dataclass
class EngineResult:
    particles: np.ndarray             # (K, 6) final (or last finite) poses
    cost_trace: np.ndarray            # (T,) mean batch cost over live particles
    failed: np.ndarray                # (K,) bool
    timings: dict = field(default_factory=dict)
    particle_trace: np.ndarray | None = None   # (T + 1, K, 6) when recorded


def _stein_params(config: IcpConfig):
    if isinstance(config, SteinConfig):
        return config.bandwidth, config.repulsion, not config.direction_sum, config.shared_batch
    return "median", True, True, False


def run_particle_engine(source: PointCloud, reference: PointCloud,
                        particles: np.ndarray, config: IcpConfig,
                        prior: PriorConfig = UNIFORM_PRIOR, *,
                        interacting: bool = True,
                        record_trace: bool = False) -> EngineResult:
    """Iterate the particle population. Both public optimizers reduce to
    this loop, which is what makes the K=1 equivalence exact.

    interacting=True applies the kernel coupling (Stein mode, failures
    raise); interacting=False treats particles as independent restarts
    (Monte-Carlo mode, failures freeze the particle and are reported).
    Worker threads only split particle chunks whose results are
    concatenated back in order, so outputs do not depend on the
    worker count.
    """
    theta = np.array(particles, dtype=float)
    if theta.ndim != 2 or theta.shape[1] != 6:
        raise InputError(f"particles must be (K, 6), got {theta.shape}")
    theta[:, 3:] = wrap_angle(theta[:, 3:])
    K = theta.shape[0]
    N = len(source)
    m = config.batch_size
    if m > N:
        raise InputError(f"batch_size {m} exceeds source size {N}")
    scale = float(N) if config.likelihood_scale is None else float(config.likelihood_scale)
    bandwidth, repulsion, average, shared_batch = _stein_params(config)
    use_plane = config.metric == "plane"
    index = build_index(reference)
    if use_plane and reference.normals is None:
        raise InputError("point-to-plane registration needs reference normals")

    part_rngs = [np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_PARTICLE, j]))
                 for j in range(K)]
    shared_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_SHARED]))

    src_pts = source.points
    ref_normals = reference.normals
    active = np.ones(K, dtype=bool)
    adam_m = np.zeros((K, 6))
    adam_v = np.zeros((K, 6))
    adam_t = np.zeros((K, 1))
    cost_trace = np.full(config.iterations, np.nan)
    trace = np.empty((config.iterations + 1, K, 6)) if record_trace else None
    if trace is not None:
        trace[0] = theta
    timings = {k: 0.0 for k in ("sampling", "transform", "matching", "gradients", "update")}

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None

    def chunked(n_items):
        if pool is None or n_items < 2 * config.workers:
            return [slice(0, n_items)]
        step = -(-n_items // config.workers)
        return [slice(s, min(s + step, n_items)) for s in range(0, n_items, step)]

    def parallel(fn, slices):
        if pool is None or len(slices) == 1:
            return [fn(sl) for sl in slices]
        return list(pool.map(fn, slices))

    try:
        for it in range(config.iterations):
            live = np.flatnonzero(active)
            if live.size == 0:
                break
            Ka = live.size

            t0 = time.perf_counter()
            if shared_batch:
                shared_idx = shared_rng.choice(N, size=m, replace=False)
                idx = np.broadcast_to(shared_idx, (Ka, m))
            else:
                idx = np.empty((Ka, m), dtype=np.int64)
                for row, j in enumerate(live):
                    idx[row] = part_rngs[j].choice(N, size=m, replace=False)
            timings["sampling"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            th = theta[live]
            R = rotation_from_euler(th[:, 3], th[:, 4], th[:, 5])       # (Ka, 3, 3)
            batches = src_pts[idx]                                       # (Ka, m, 3)
            slices = chunked(Ka)

            def do_transform(sl):
                return np.einsum("kij,kmj->kmi", R[sl], batches[sl]) + th[sl, None, :3]

            moved = np.concatenate(parallel(do_transform, slices), axis=0)
            timings["transform"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            dist, ref_idx = index.query(moved.reshape(-1, 3), workers=config.workers)
            dist = dist.reshape(Ka, m)
            ref_idx = ref_idx.reshape(Ka, m)
            matched = index.reference.points[ref_idx]                    # (Ka, m, 3)
            mask = np.ones((Ka, m), dtype=bool)
            if config.max_dist is not None:
                mask &= dist <= config.max_dist
            normals = None
            if use_plane:
                normals = ref_normals[ref_idx]
                mask &= np.einsum("kmi,kmi->km", normals, normals) > 0.5
            counts = mask.sum(axis=1)
            dead = counts == 0
            timings["matching"] += time.perf_counter() - t0

            if dead.any():
                if not interacting:
                    # Freeze failed restarts; the rest are independent.
                    active[live[dead]] = False
                    keep = ~dead
                    live = live[keep]
                    if live.size == 0:
                        break
                    th, R, moved, matched, mask, counts = (
                        th[keep], R[keep], moved[keep], matched[keep], mask[keep], counts[keep])
                    dist, idx = dist[keep], idx[keep]
                    batches = batches[keep]
                    if normals is not None:
                        normals = normals[keep]
                    Ka = live.size
                    slices = chunked(Ka)
                else:
                    raise MatchRejectionError(
                        f"iteration {it}: all pairs rejected for particle(s) "
                        f"{live[dead].tolist()} (max_dist={config.max_dist})")

            t0 = time.perf_counter()
            partials = rotation_partials(th[:, 3], th[:, 4], th[:, 5])   # (Ka, 3, 3, 3)
            e = moved - matched
            fmask = mask.astype(float)

            def do_grad(sl):
                ee = e[sl]
                mm = fmask[sl]
                cc = counts[sl].astype(float)[:, None]
                if use_plane:
                    proj = np.einsum("kmi,kmi->km", normals[sl], ee) * mm
                    p = normals[sl] * proj[:, :, None]
                    cost = (proj * proj).sum(axis=1) / cc[:, 0]
                else:
                    p = ee * mm[:, :, None]
                    cost = (np.einsum("kmi,kmi->km", ee, ee) * mm).sum(axis=1) / cc[:, 0]
                g = np.empty((ee.shape[0], 6))
                g[:, :3] = p.sum(axis=1) / cc
                # Two fixed-order contractions (no path optimizer) so the
                # arithmetic is identical for any particle chunking, which
                # keeps results bitwise equal across worker counts.
                rotated = np.einsum("kpij,kmj->kpmi", partials[sl], batches[sl])
                g[:, 3:] = np.einsum("kmi,kpmi->kp", p, rotated) / cc
                return g, cost

            parts = parallel(do_grad, slices)
            grads = np.concatenate([p[0] for p in parts], axis=0)
            costs = np.concatenate([p[1] for p in parts], axis=0)
            cost_trace[it] = float(costs.mean())

            if interacting:
                if bandwidth == "median":
                    h_t = median_bandwidth(th[:, :3])
                    h_r = median_bandwidth(th[:, 3:], angular=True)
                else:
                    h_t = h_r = float(bandwidth)
                dirs = stein_direction(th, scale * grads, prior, h_t, h_r,
                                       average=average, repulsion=repulsion)
            else:
                dirs = -scale * grads
            timings["gradients"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            if config.optimizer == "adam":
                # Same arithmetic as adam_step, stacked over particles, fed
                # the descent gradient -dirs.
                adam_t[live] += 1.0
                tt = adam_t[live]
                mm_ = config.beta1 * adam_m[live] + (1.0 - config.beta1) * (-dirs)
                vv = config.beta2 * adam_v[live] + (1.0 - config.beta2) * (dirs * dirs)
                adam_m[live] = mm_
                adam_v[live] = vv
                mhat = mm_ / (1.0 - config.beta1 ** tt)
                vhat = vv / (1.0 - config.beta2 ** tt)
                step = -config.step_size * mhat / (np.sqrt(vhat) + config.eps)
            else:
                step = config.step_size * dirs
            new_theta = th + step
            new_theta[:, 3:] = wrap_angle(new_theta[:, 3:])
            bad = ~np.isfinite(new_theta).all(axis=1)
            if bad.any():
                if interacting:
                    raise DivergedError(f"iteration {it}: non-finite pose for particle(s) "
                                        f"{live[bad].tolist()}")
                active[live[bad]] = False
                new_theta[bad] = th[bad]
            theta[live] = new_theta
            timings["update"] += time.perf_counter() - t0

            if trace is not None:
                trace[it + 1] = theta
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    return EngineResult(particles=theta, cost_trace=cost_trace, failed=~active,
                        timings=timings, particle_trace=trace)


# --------------------------------------------------------------------------
# Public optimizer


def run_stein_icp(source: PointCloud, reference: PointCloud, config: SteinConfig,
                  prior: PriorConfig = UNIFORM_PRIOR, *,
                  initial_particles: np.ndarray | None = None,
                  full_output: bool = False):
    """Run the full K-particle inference and return the pose posterior.

    Initial particles are uniform draws inside config.init_bounds(), or
    prior draws when an informed prior is supplied, or exactly the given
    initial_particles array. With full_output=True the EngineResult
    (timings, cost trace, trace) rides along as a second return value.
    """
    if initial_particles is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_INIT]))
        init_prior = prior if prior.kind == "informed" else None
        particles = sample_initial_particles(config.particles, config.init_bounds(), rng,
                                             init_prior)
    else:
        particles = np.asarray(initial_particles, dtype=float)
        if particles.shape != (config.particles, 6):
            raise InputError(
                f"initial_particles must be ({config.particles}, 6), got {particles.shape}")
    result = run_particle_engine(source, reference, particles, config, prior,
                                 interacting=True, record_trace=full_output)
    dist = PoseDistribution.from_samples(result.particles)
    if full_output:
        return dist, result
    return dist


def sgd_equivalent_config(config: IcpConfig, init) -> SteinConfig:
    """SteinConfig whose one-particle run reproduces run_sgd_icp(init, config)."""
    base = {f.name: getattr(config, f.name) for f in dataclass_fields(IcpConfig)}
    init = np.asarray(init.to_array() if hasattr(init, "to_array") else init, dtype=float)
    return SteinConfig(**base, particles=1, init_center=tuple(init),
                       trans_range=0.0, rot_range=0.0)

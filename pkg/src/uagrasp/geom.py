"""Poses, quaternions and kernel densities over SE(3) x R^2.

Quaternions are stored as ``[w, x, y, z]`` arrays and composed with the
Hamilton product.  Every array helper accepts leading batch dimensions.

Densities are weighted particle sets.  The kernel of a particle factorises
into an isotropic position Gaussian, an antipodal von Mises-Fisher factor on
the unit quaternions and an isotropic Gaussian on the two principal
curvatures.  All products are accumulated in log space; the public
``eval_*`` helpers exponentiate on return.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateConditionalError

LOG_2PI = math.log(2.0 * math.pi)

# ---------------------------------------------------------------------------
# Quaternion helpers
# ---------------------------------------------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors ``v`` by unit quaternions ``q`` (q v q*)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * _cross(u, v)
    return v + w * t + _cross(u, t)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross is slow for many small batches.
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def quat_from_axis_angle(axis: Sequence[float], angle: float | np.ndarray) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=float)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_exp(v: np.ndarray) -> np.ndarray:
    """Exponential map from R^3 to S^3: ``(cos|v|, sin|v| v/|v|)``.

    ``|v|`` is the geodesic distance on S^3 from the identity, i.e. half of
    the rotation angle.
    """
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    scale = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    return np.concatenate([np.cos(theta), scale * v], axis=-1)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_exp` on the hemisphere ``w >= 0``."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0, -q, q)
    vn = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    theta = np.arctan2(vn, q[..., :1])
    small = vn < 1e-12
    scale = np.where(small, 1.0, theta / np.where(small, 1.0, vn))
    return scale * q[..., 1:]


def quat_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation angle (radians, in [0, pi]) between orientations ``a`` and ``b``."""
    d = np.abs(np.sum(np.asarray(a) * np.asarray(b), axis=-1))
    return 2.0 * np.arccos(np.clip(d, 0.0, 1.0))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrices to unit quaternions with ``w >= 0`` (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    tr = np.trace(m, axis1=1, axis2=2)
    diag = np.diagonal(m, axis1=1, axis2=2)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=1), axis=1)
    for idx in range(m.shape[0]):
        r = m[idx]
        c = choice[idx]
        if c == 0:
            s = 2.0 * math.sqrt(max(1.0 + tr[idx], 0.0))
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif c == 1:
            s = 2.0 * math.sqrt(max(1.0 + r[0, 0] - r[1, 1] - r[2, 2], 0.0))
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif c == 2:
            s = 2.0 * math.sqrt(max(1.0 + r[1, 1] - r[0, 0] - r[2, 2], 0.0))
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * math.sqrt(max(1.0 + r[2, 2] - r[0, 0] - r[1, 1], 0.0))
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        out[idx] = q
    out = quat_normalize(out)
    out[out[:, 0] < 0] *= -1.0
    return out.reshape(batch + (4,))


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform samples on S^3."""
    return quat_normalize(rng.standard_normal((n, 4)))


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------


def compose_arrays(pa, qa, pb, qb):
    """Batch pose composition ``a o b``; returns ``(p, q)``."""
    return np.asarray(pa) + quat_rotate(qa, pb), quat_mul(qa, qb)


def inverse_arrays(p, q):
    qi = quat_conj(q)
    return -quat_rotate(qi, p), qi


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform: position ``p`` (meters) and unit quaternion ``q``."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(3)
        q = np.array(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.all(np.isfinite(p)) or not np.isfinite(n) or n == 0.0:
            raise ValueError("pose must have a finite position and non-zero quaternion")
        if abs(n - 1.0) >= 1e-12:
            q = q / n
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> Pose:
        """From ``[px, py, pz, qw, qx, qy, qz]``."""
        values = np.asarray(values, dtype=float)
        return cls(values[:3], values[3:7])

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.p
        return m

    def transform(self, points: np.ndarray) -> np.ndarray:
        return self.p + quat_rotate(self.q, points)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def __repr__(self) -> str:
        return f"Pose(p={self.p.tolist()}, q={self.q.tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """Pose of ``b`` expressed through ``a``: ``(p_a + q_a p_b, q_a q_b)``."""
    p, q = compose_arrays(a.p, a.q, b.p, b.q)
    return Pose(p, q)


def inverse(v: Pose) -> Pose:
    p, q = inverse_arrays(v.p, v.q)
    return Pose(p, q)


# ---------------------------------------------------------------------------
# Features and bandwidths
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Feature:
    """A pose paired with a principal-curvature pair ``r`` (1/m)."""

    v: Pose
    r: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(2)
        if not np.all(np.isfinite(r)):
            raise ValueError("curvatures must be finite")
        r.flags.writeable = False
        object.__setattr__(self, "r", r)

    @property
    def p(self) -> np.ndarray:
        return self.v.p

    @property
    def q(self) -> np.ndarray:
        return self.v.q


@dataclass(frozen=True)
class Bandwidth:
    """Kernel bandwidth: position std (m), vMF concentration, curvature std (1/m)."""

    sigma_p: float
    sigma_q: float
    sigma_r: float

    def __post_init__(self):
        for name in ("sigma_p", "sigma_q", "sigma_r"):
            value = float(getattr(self, name))
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be strictly positive, got {value}")
            object.__setattr__(self, name, value)


# ---------------------------------------------------------------------------
# Kernel factors
# ---------------------------------------------------------------------------

_ASYMPTOTIC_TERMS = 30


def log_bessel_i1(kappa: float) -> float:
    """log I_1(kappa): power series below 20, asymptotic expansion above."""
    kappa = float(kappa)
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    if kappa < 20.0:
        half = 0.5 * kappa
        term = half
        total = term
        k = 0
        while True:
            k += 1
            term *= half * half / (k * (k + 1))
            total += term
            if term < total * 1e-17:
                break
        return math.log(total)
    # I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k,  mu = 4 nu^2 = 4
    mu = 4.0
    term = 1.0
    total = 1.0
    for k in range(1, _ASYMPTOTIC_TERMS):
        term *= -(mu - (2 * k - 1) ** 2) / (k * 8.0 * kappa)
        total += term
    return kappa - 0.5 * math.log(2.0 * math.pi * kappa) + math.log(total)


def log_c4(kappa: float) -> float:
    """Log normaliser of the antipodal vMF pair on S^3.

    ``(e^{k d} + e^{-k d}) / 2`` integrates to ``(2 pi)^2 I_1(k) / k`` over
    S^3, so the constant is its reciprocal.
    """
    return math.log(kappa) - 2.0 * LOG_2PI - log_bessel_i1(kappa)


def _log_cosh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - math.log(2.0)


def log_theta(q: np.ndarray, mu_q: np.ndarray, sigma_q: float) -> np.ndarray:
    d = np.sum(np.asarray(q, dtype=float) * np.asarray(mu_q, dtype=float), axis=-1)
    return log_c4(sigma_q) + _log_cosh(sigma_q * d)


def eval_theta(q, mu_q, sigma_q: float):
    """Antipodal von Mises-Fisher density of ``q`` around ``mu_q``."""
    return np.exp(log_theta(q, mu_q, sigma_q))


def log_gauss_iso(x: np.ndarray, mu: np.ndarray, sigma: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    diff = x - np.asarray(mu, dtype=float)
    n = x.shape[-1]
    return -0.5 * n * (LOG_2PI + 2.0 * math.log(sigma)) - np.sum(diff * diff, axis=-1) / (2.0 * sigma * sigma)


def log_kernel(x: Feature, mu: Feature, sigma: Bandwidth) -> float:
    return float(
        log_gauss_iso(x.p, mu.p, sigma.sigma_p)
        + log_theta(x.q, mu.q, sigma.sigma_q)
        + log_gauss_iso(x.r, mu.r, sigma.sigma_r)
    )


def eval_kernel(x: Feature, mu: Feature, sigma: Bandwidth) -> float:
    return math.exp(log_kernel(x, mu, sigma))


# ---------------------------------------------------------------------------
# Pair matrices (rows: queries, columns: particles)
# ---------------------------------------------------------------------------


def _pair_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Broadcast difference rather than a matmul expansion: results must not
    # depend on how many query rows are evaluated together.
    out = np.zeros((a.shape[0], b.shape[0]))
    for d in range(a.shape[1]):
        diff = a[:, d, None] - b[None, :, d]
        out += diff * diff
    return out


def log_pose_kernel_matrix(positions, quats, centers_p, centers_q, sigma_p, sigma_q) -> np.ndarray:
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    quats = np.atleast_2d(np.asarray(quats, dtype=float))
    sq = _pair_sqdist(positions, np.asarray(centers_p, dtype=float))
    dots = np.sum(quats[:, None, :] * np.asarray(centers_q, dtype=float)[None, :, :], axis=-1)
    return (
        -1.5 * (LOG_2PI + 2.0 * math.log(sigma_p))
        - sq / (2.0 * sigma_p * sigma_p)
        + log_c4(sigma_q)
        + _log_cosh(sigma_q * dots)
    )


def log_curv_kernel_matrix(curvs, centers_r, sigma_r) -> np.ndarray:
    curvs = np.atleast_2d(np.asarray(curvs, dtype=float))
    sq = _pair_sqdist(curvs, np.asarray(centers_r, dtype=float))
    return -(LOG_2PI + 2.0 * math.log(sigma_r)) - sq / (2.0 * sigma_r * sigma_r)


# ---------------------------------------------------------------------------
# Particle densities
# ---------------------------------------------------------------------------


def _unit_rows(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(np.abs(n - 1.0) < 1e-12, q, q / n)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def sample_antipodal_vmf(rng: np.random.Generator, mu_q: np.ndarray, sigma_q: float) -> np.ndarray:
    """Tangent-space Gaussian at ``mu_q`` (std ``1/sqrt(sigma_q)``), mapped to S^3, random sign."""
    mu_q = np.atleast_2d(np.asarray(mu_q, dtype=float))
    n = mu_q.shape[0]
    tangent = rng.standard_normal((n, 3)) / math.sqrt(sigma_q)
    q = quat_normalize(quat_mul(mu_q, quat_exp(tangent)))
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return q * signs[:, None]


class Density:
    """Weighted particle set over SE(3) x R^2 with a shared bandwidth.

    Immutable once built; evaluation is safe from several threads.
    """

    def __init__(self, positions, quats, curvs, weights, bandwidth: Bandwidth):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        quats = _unit_rows(np.asarray(quats, dtype=float).reshape(-1, 4))
        curvs = np.asarray(curvs, dtype=float).reshape(-1, 2)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        k = positions.shape[0]
        if k < 1:
            raise ValueError("a density needs at least one particle")
        if not (quats.shape[0] == curvs.shape[0] == weights.shape[0] == k):
            raise ValueError("particle arrays disagree in length")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        total = weights.sum()
        if total <= 0:
            raise ValueError("weights must not all be zero")
        self.positions = _readonly(positions)
        self.quats = _readonly(quats)
        self.curvs = _readonly(curvs)
        # Leave already-normalised inputs bit-identical (archive round trips).
        self.weights = _readonly(weights if abs(total - 1.0) < 1e-12 else weights / total)
        self.bandwidth = bandwidth

    @classmethod
    def from_features(cls, features: Sequence[Feature], weights, bandwidth: Bandwidth) -> Density:
        return cls(
            [f.p for f in features], [f.q for f in features], [f.r for f in features], weights, bandwidth
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def feature(self, j: int) -> Feature:
        return Feature(Pose(self.positions[j], self.quats[j]), self.curvs[j])

    def log_pdf(self, positions, quats, curvs) -> np.ndarray:
        bw = self.bandwidth
        lk = log_pose_kernel_matrix(positions, quats, self.positions, self.quats, bw.sigma_p, bw.sigma_q)
        lk = lk + log_curv_kernel_matrix(curvs, self.curvs, bw.sigma_r)
        return logsumexp(lk + self.log_weights[None, :], axis=1)

    def log_marginal_r(self, curvs) -> np.ndarray:
        lk = log_curv_kernel_matrix(curvs, self.curvs, self.bandwidth.sigma_r)
        return logsumexp(lk + self.log_weights[None, :], axis=1)

    def log_conditional_weights(self, curvs) -> np.ndarray:
        """Row-normalised log weights of the pose-only density given each ``r``."""
        lw = log_curv_kernel_matrix(curvs, self.curvs, self.bandwidth.sigma_r) + self.log_weights[None, :]
        return lw - logsumexp(lw, axis=1, keepdims=True)

    def log_pose_pdf(self, positions, quats, log_weights=None) -> np.ndarray:
        bw = self.bandwidth
        lw = self.log_weights if log_weights is None else np.asarray(log_weights)
        lk = log_pose_kernel_matrix(positions, quats, self.positions, self.quats, bw.sigma_p, bw.sigma_q)
        return logsumexp(lk + lw[None, :], axis=1)

    def sample_arrays(self, rng: np.random.Generator, n: int):
        """Draw ``n`` features; returns ``(positions, quats, curvs, indices)``."""
        idx = rng.choice(len(self), size=n, p=self.weights)
        bw = self.bandwidth
        pos = self.positions[idx] + bw.sigma_p * rng.standard_normal((n, 3))
        curv = self.curvs[idx] + bw.sigma_r * rng.standard_normal((n, 2))
        quat = sample_antipodal_vmf(rng, self.quats[idx], bw.sigma_q)
        return pos, quat, curv, idx


def _as_query(x: Feature):
    return x.p[None, :], x.q[None, :], x.r[None, :]


def eval_density(d: Density, x: Feature) -> float:
    return float(np.exp(d.log_pdf(*_as_query(x))[0]))


def marginal_r(d: Density, r) -> float:
    return float(np.exp(d.log_marginal_r(np.asarray(r, dtype=float)[None, :])[0]))


def conditional_weights(d: Density, r) -> np.ndarray:
    """Particle weights of the pose-only density conditioned on curvature ``r``."""
    r = np.asarray(r, dtype=float)[None, :]
    if np.exp(d.log_marginal_r(r)[0]) == 0.0:
        raise DegenerateConditionalError(f"curvature marginal underflows at r={r[0].tolist()}")
    return np.exp(d.log_conditional_weights(r)[0])


def sample(d: Density, rng: np.random.Generator) -> Feature:
    pos, quat, curv, _ = d.sample_arrays(rng, 1)
    return Feature(Pose(pos[0], quat[0]), curv[0])

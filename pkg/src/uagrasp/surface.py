"""Point clouds and oriented surface features.

Each retained cloud point becomes a :class:`~uagrasp.geom.Feature` whose frame
has the two principal-curvature directions as x/y axes and the outward
normal as z axis, and whose descriptor is the curvature pair ``r1 >= r2``.
Curvatures are signed so that a convex patch (bulging towards the viewpoint)
is positive: a sphere of radius R gives ``(1/R, 1/R)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateNeighborhoodError,
    EmptyCloudError,
    PLYParseError,
    RankDeficientFitError,
)
from .geom import Feature, Pose, matrix_to_quat

log = logging.getLogger(__name__)

DEFAULT_K_NN = 20
EIGEN_TIE_TOL = 1e-12
MAX_FIT_CONDITION = 1e8
UMBILIC_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    viewpoint: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        vp = np.array(self.viewpoint, dtype=float).reshape(3)
        pts.flags.writeable = False
        vp.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "viewpoint", vp)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, pose: Pose) -> PointCloud:
        return PointCloud(pose.transform(self.points), pose.transform(self.viewpoint))


# ---------------------------------------------------------------------------
# ASCII PLY
# ---------------------------------------------------------------------------

_PLY_FLOATS = {"float", "float32", "double", "float64"}


def load_cloud(path: str | Path) -> PointCloud:
    """Read an ASCII PLY file with ``x y z`` vertex properties.

    A ``comment viewpoint vx vy vz`` header line sets the viewpoint; it
    defaults to the origin.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise PLYParseError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != "ply":
        raise PLYParseError("missing 'ply' magic", 1)

    n_vertex = None
    props: list[str] = []
    in_vertex = False
    viewpoint = np.zeros(3)
    body_start = None
    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens:
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise PLYParseError("only ASCII PLY is supported", lineno)
        elif key == "comment":
            if len(tokens) >= 2 and tokens[1] == "viewpoint":
                try:
                    viewpoint = np.array([float(t) for t in tokens[2:5]])
                except ValueError as exc:
                    raise PLYParseError(f"bad viewpoint comment: {raw!r}", lineno) from exc
                if viewpoint.shape != (3,):
                    raise PLYParseError("viewpoint comment needs three values", lineno)
        elif key == "element":
            if len(tokens) != 3:
                raise PLYParseError(f"malformed element line: {raw!r}", lineno)
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tokens[2])
                except ValueError as exc:
                    raise PLYParseError(f"bad vertex count {tokens[2]!r}", lineno) from exc
        elif key == "property":
            if in_vertex:
                if len(tokens) != 3:
                    raise PLYParseError(f"unsupported property line: {raw!r}", lineno)
                props.append(tokens[2])
                if tokens[2] in "xyz" and tokens[1] not in _PLY_FLOATS:
                    raise PLYParseError(f"coordinate {tokens[2]} must be a float property", lineno)
        elif key == "end_header":
            body_start = lineno
            break
        elif key != "obj_info":
            raise PLYParseError(f"unexpected header line: {raw!r}", lineno)
    if body_start is None:
        raise PLYParseError("missing end_header")
    if n_vertex is None:
        raise PLYParseError("no vertex element")
    try:
        cols = [props.index(a) for a in "xyz"]
    except ValueError as exc:
        raise PLYParseError("vertex element lacks x, y, z properties") from exc
    if n_vertex == 0:
        raise EmptyCloudError(f"{path} contains no points")

    points = np.empty((n_vertex, 3))
    lineno = body_start
    count = 0
    for raw in lines[body_start:]:
        lineno += 1
        tokens = raw.split()
        if not tokens:
            continue
        if count == n_vertex:
            break
        if len(tokens) < len(props):
            raise PLYParseError(f"expected {len(props)} values, got {len(tokens)}", lineno)
        try:
            row = [float(tokens[c]) for c in cols]
        except ValueError as exc:
            raise PLYParseError(f"non-numeric coordinate in {raw.strip()!r}", lineno) from exc
        if not all(math.isfinite(v) for v in row):
            raise PLYParseError(f"non-finite coordinate in {raw.strip()!r}", lineno)
        points[count] = row
        count += 1
    if count < n_vertex:
        raise PLYParseError(f"expected {n_vertex} vertices, found {count}", lineno)
    return PointCloud(points, viewpoint)


def save_cloud(path: str | Path, cloud: PointCloud) -> None:
    vp = cloud.viewpoint.tolist()
    out = [
        "ply",
        "format ascii 1.0",
        f"comment viewpoint {vp[0]!r} {vp[1]!r} {vp[2]!r}",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    out.extend(f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist())
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Normals and curvatures
# ---------------------------------------------------------------------------


def _neighborhoods(points: np.ndarray, k_nn: int) -> np.ndarray:
    if len(points) < k_nn + 1:
        raise EmptyCloudError(f"need at least {k_nn + 1} points, got {len(points)}")
    _, idx = cKDTree(points).query(points, k=k_nn)
    return idx


def estimate_normals(cloud: PointCloud, k_nn: int = DEFAULT_K_NN, *, skip_degenerate: bool = False):
    """PCA normals oriented towards the viewpoint.

    The normal is the eigenvector of the neighbourhood covariance with the
    smallest eigenvalue.  A point whose two smallest eigenvalues tie (relative
    to the largest) has no defined normal: it raises, or yields a NaN row when
    ``skip_degenerate`` is set.
    """
    if k_nn < 4:
        raise ValueError("k_nn must be at least 4")
    pts = cloud.points
    idx = _neighborhoods(pts, k_nn)
    nb = pts[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k_nn
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    tie = (evals[:, 1] - evals[:, 0]) <= EIGEN_TIE_TOL * np.maximum(evals[:, 2], np.finfo(float).tiny)
    if np.any(tie) and not skip_degenerate:
        bad = int(np.flatnonzero(tie)[0])
        raise DegenerateNeighborhoodError(f"ambiguous normal at point {bad}")
    flip = np.einsum("ni,ni->n", normals, cloud.viewpoint - pts) < 0
    normals[flip] *= -1.0
    normals[tie] = np.nan
    return normals


def _tangent_basis(normals: np.ndarray):
    # Any orthonormal tangent pair works; principal directions come out the same.
    pick = np.argmin(np.abs(normals), axis=1)
    helper = np.zeros_like(normals)
    helper[np.arange(len(normals)), pick] = 1.0
    e1 = helper - np.einsum("ni,ni->n", helper, normals)[:, None] * normals
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(normals, e1)
    return e1, e2


def reference_axes(points: np.ndarray) -> np.ndarray:
    """Right-handed principal axes of a cloud (columns), signs fixed by skewness.

    Used to resolve principal-direction signs in a way that moves with the
    cloud under rigid transforms.
    """
    centered = points - points.mean(axis=0)
    _, vecs = np.linalg.eigh(centered.T @ centered)
    axes = vecs[:, ::-1].copy()
    for a in range(2):
        if np.sum((centered @ axes[:, a]) ** 3) < 0:
            axes[:, a] *= -1.0
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return axes


@dataclass
class CurvatureData:
    k1: np.ndarray
    k2: np.ndarray
    r: np.ndarray


def estimate_curvatures(
    cloud: PointCloud, normals: np.ndarray, k_nn: int = DEFAULT_K_NN, *, skip_degenerate: bool = False
) -> CurvatureData:
    """Principal curvatures from a local quadric fit ``z = a x^2 + b xy + c y^2``.

    The fit is done in a normal-aligned frame over the ``k_nn`` neighbourhood;
    curvatures are the eigenvalues of the negated Weingarten matrix
    ``[[2a, b], [b, 2c]]``.  ``k1`` carries ``r1 >= r2``; its sign makes its
    first non-negligible component in the cloud's :func:`reference_axes`
    frame positive, and ``k2 = normal x k1``.
    """
    pts = cloud.points
    normals = np.asarray(normals, dtype=float)
    n_pts = len(pts)
    valid = np.all(np.isfinite(normals), axis=1)
    k1 = np.full((n_pts, 3), np.nan)
    k2 = np.full((n_pts, 3), np.nan)
    r = np.full((n_pts, 2), np.nan)
    if not np.any(valid):
        return CurvatureData(k1, k2, r)

    idx = _neighborhoods(pts, k_nn)[valid]
    nrm = normals[valid]
    e1, e2 = _tangent_basis(nrm)
    d = pts[idx] - pts[valid][:, None, :]
    x = np.einsum("nki,ni->nk", d, e1)
    y = np.einsum("nki,ni->nk", d, e2)
    z = np.einsum("nki,ni->nk", d, nrm)
    design = np.stack([x * x, x * y, y * y], axis=-1)
    u, s, vt = np.linalg.svd(design, full_matrices=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = s[:, 0] / s[:, -1]
    bad = ~(cond <= MAX_FIT_CONDITION)
    if np.any(bad) and not skip_degenerate:
        first = int(np.flatnonzero(valid)[np.flatnonzero(bad)[0]])
        raise RankDeficientFitError(f"quadric fit is rank deficient at point {first}")
    s_safe = np.where(bad[:, None], 1.0, s)
    coef = np.einsum("nji,nj->ni", vt, np.einsum("nkj,nk->nj", u, z) / s_safe)
    a, b, c = coef[:, 0], coef[:, 1], coef[:, 2]
    shape_op = -np.stack([np.stack([2 * a, b], -1), np.stack([b, 2 * c], -1)], -2)
    evals, evecs = np.linalg.eigh(shape_op)
    r_local = evals[:, ::-1]
    d1 = evecs[:, :, 1]
    dir1 = d1[:, :1] * e1 + d1[:, 1:] * e2
    dir1 /= np.linalg.norm(dir1, axis=1, keepdims=True)

    axes = reference_axes(pts)
    # Numerically umbilic patches (flat faces) have no principal direction;
    # use the projected reference axis so a flat face gets one frame.
    umbilic = (r_local[:, 0] - r_local[:, 1]) < UMBILIC_TOL
    if np.any(umbilic):
        n_u = nrm[umbilic]
        proj = axes[:, 0] - (n_u @ axes[:, 0])[:, None] * n_u
        alt = axes[:, 1] - (n_u @ axes[:, 1])[:, None] * n_u
        use_alt = np.linalg.norm(proj, axis=1) < 0.1
        proj[use_alt] = alt[use_alt]
        dir1[umbilic] = proj / np.linalg.norm(proj, axis=1, keepdims=True)

    coords = dir1 @ axes
    lead = np.argmax(np.abs(coords) > 1e-6, axis=1)
    sign = np.sign(coords[np.arange(len(coords)), lead])
    sign[sign == 0] = 1.0
    dir1 *= sign[:, None]
    dir2 = np.cross(nrm, dir1)

    rows = np.flatnonzero(valid)
    good = rows[~bad]
    k1[good] = dir1[~bad]
    k2[good] = dir2[~bad]
    r[good] = r_local[~bad]
    return CurvatureData(k1, k2, r)


@dataclass
class SurfaceFeatureSet:
    features: list[Feature]
    indices: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.features)

    def arrays(self):
        """``(positions, quats, curvs)`` stacked over features."""
        return (
            np.array([f.p for f in self.features]).reshape(-1, 3),
            np.array([f.q for f in self.features]).reshape(-1, 4),
            np.array([f.r for f in self.features]).reshape(-1, 2),
        )


def build_features(cloud: PointCloud, normals: np.ndarray, curv: CurvatureData) -> SurfaceFeatureSet:
    normals = np.asarray(normals, dtype=float)
    ok = np.all(np.isfinite(normals), axis=1) & np.all(np.isfinite(curv.r), axis=1)
    rows = np.flatnonzero(ok)
    frames = np.stack([curv.k1[rows], curv.k2[rows], normals[rows]], axis=-1)
    # Re-orthonormalise (k1 is already unit and tangent up to rounding).
    u, _, vt = np.linalg.svd(frames)
    frames = u @ vt
    quats = matrix_to_quat(frames) if len(rows) else np.zeros((0, 4))
    features = [
        Feature(Pose(cloud.points[j], quats[i]), curv.r[j]) for i, j in enumerate(rows)
    ]
    skipped = len(cloud) - len(rows)
    if skipped:
        log.info("skipped %d of %d points with degenerate neighbourhoods", skipped, len(cloud))
    return SurfaceFeatureSet(features, rows, skipped)


def extract_features(cloud: PointCloud, k_nn: int = DEFAULT_K_NN) -> SurfaceFeatureSet:
    """Normals, curvatures and frames for every point that admits them."""
    normals = estimate_normals(cloud, k_nn, skip_degenerate=True)
    curv = estimate_curvatures(cloud, normals, k_nn, skip_degenerate=True)
    return build_features(cloud, normals, curv)

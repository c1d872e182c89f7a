"""Point-to-point ICP against a voxel map: Gauss-Newton with robust reweighting.

Correspondences come from the voxel map's windowed nearest search and are
recomputed every iteration; residuals are reweighted per iteration from the
current residual norms (IRLS).  The pose update is a left-multiplicative
twist: T <- exp(delta) o T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import Pose, Twist, compose, se3_exp, transform_points
from .voxel_map import VoxelMap

KERNELS = ("geman_mcclure", "tukey", "cauchy")


def robust_weight(kernel: str, r, c: float):
    """IRLS weight in [0, 1] for residual norm r and kernel width c.

    Closed forms: Geman-McClure 1/(1 + r^2/c^2)^2, Tukey (1 - (r/c)^2)^2
    cut off at r >= c, Cauchy 1/(1 + (r/c)^2).
    """
    if c <= 0:
        raise ValueError("kernel width must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("residual norm must be non-negative")
    u2 = (r / c) ** 2
    if kernel == "geman_mcclure":
        w = 1.0 / (1.0 + u2) ** 2
    elif kernel == "tukey":
        w = np.where(u2 < 1.0, (1.0 - u2) ** 2, 0.0)
    elif kernel == "cauchy":
        w = 1.0 / (1.0 + u2)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return w if w.ndim else float(w)


def robust_rho(kernel: str, r, c: float):
    """Robust loss value matching the robust_weight forms (w = rho'(r)/r)."""
    if c <= 0:
        raise ValueError("kernel width must be positive")
    r = np.asarray(r, dtype=float)
    u2 = (r / c) ** 2
    if kernel == "geman_mcclure":
        rho = 0.5 * r**2 / (1.0 + u2)
    elif kernel == "tukey":
        rho = np.where(u2 < 1.0, c**2 / 6.0 * (1.0 - (1.0 - u2) ** 3), c**2 / 6.0)
    elif kernel == "cauchy":
        rho = 0.5 * c**2 * np.log1p(u2)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return rho if rho.ndim else float(rho)


@dataclass
class RegistrationParams:
    max_correspondence_dist: float = 6.0
    kernel_width: float = 1.0
    max_iterations: int = 30
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-4

    def __post_init__(self):
        for name in (
            "max_correspondence_dist",
            "kernel_width",
            "max_iterations",
            "translation_epsilon",
            "rotation_epsilon",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class RegistrationResult:
    pose: Pose
    inlier_ratio: float
    iterations: int
    converged: bool
    final_cost: float

    @property
    def failed(self) -> bool:
        """True for the too-few-correspondences / degenerate-system outcome."""
        return not self.converged and self.inlier_ratio == 0.0


def residual_and_jacobian(
    pose: Pose, source: np.ndarray, target: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Residuals r_i = T(s_i) - t_i and their 3x6 Jacobians.

    The Jacobian is taken with respect to a left-multiplicative twist
    [rho, theta]: d/d(delta) [exp(delta) T s] = [I | -skew(T s)].
    """
    src = np.atleast_2d(np.asarray(source, dtype=float))
    tgt = np.atleast_2d(np.asarray(target, dtype=float))
    q = transform_points(pose, src)
    r = q - tgt
    n = len(src)
    J = np.zeros((n, 3, 6))
    J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
    J[:, 0, 4] = q[:, 2]
    J[:, 0, 5] = -q[:, 1]
    J[:, 1, 3] = -q[:, 2]
    J[:, 1, 5] = q[:, 0]
    J[:, 2, 3] = q[:, 1]
    J[:, 2, 4] = -q[:, 0]
    return r, J


def build_normal_equations(
    source: np.ndarray, target: np.ndarray, weights: np.ndarray, pose: Pose
) -> tuple[np.ndarray, np.ndarray, float]:
    """Weighted Gauss-Newton system (H, b, cost) for the current pose.

    H = sum w J^T J, b = sum w J^T r, cost = sum w ||r||^2.
    """
    w = np.atleast_1d(np.asarray(weights, dtype=float))
    r, J = residual_and_jacobian(pose, source, target)
    H = np.einsum("n,nij,nik->jk", w, J, J)
    b = np.einsum("n,nij,ni->j", w, J, r)
    cost = float(np.einsum("n,ni,ni->", w, r, r))
    return H, b, cost


def icp_align(
    source: np.ndarray,
    target: VoxelMap,
    init: Pose,
    params: RegistrationParams | None = None,
) -> RegistrationResult:
    """Align a source cloud to a voxel map starting from init.

    Fails (converged False, inlier_ratio 0) when fewer than 6 correspondences
    exist or the normal equations degenerate; otherwise iterates Gauss-Newton
    until the twist update drops below both epsilons.
    """
    params = params or RegistrationParams()
    src = np.atleast_2d(np.asarray(source, dtype=float))
    if src.size == 0:
        raise ValueError("source cloud is empty")

    pose = init
    converged = False
    cost = float("nan")
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        src_world = transform_points(pose, src)
        tgt, dist, found = target.nearest_batch(src_world, params.max_correspondence_dist)
        if int(found.sum()) < 6:
            return RegistrationResult(pose, 0.0, iterations, False, float("nan"))
        w = robust_weight("geman_mcclure", dist[found], params.kernel_width)
        H, b, cost = build_normal_equations(src[found], tgt[found], w, pose)
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(b))) or np.linalg.cond(H) > 1e12:
            return RegistrationResult(pose, 0.0, iterations, False, float("nan"))
        try:
            delta = np.linalg.solve(H, -b)
        except np.linalg.LinAlgError:
            return RegistrationResult(pose, 0.0, iterations, False, float("nan"))
        pose = compose(se3_exp(Twist.from_vector(delta)), pose)
        if (
            np.linalg.norm(delta[:3]) < params.translation_epsilon
            and np.linalg.norm(delta[3:]) < params.rotation_epsilon
        ):
            converged = True
            break

    _, _, found = target.nearest_batch(
        transform_points(pose, src), params.max_correspondence_dist
    )
    ratio = float(found.mean())
    return RegistrationResult(pose, ratio, iterations, converged, cost)

"""Per-frame robust fusion of absolute (scan-to-map) and relative (scan-to-scan)
pose measurements.

A single pose is free per frame; the previous optimized pose is a fixed
anchor.  The absolute constraint carries a Tukey loss, the relative one the
softer Cauchy loss, both with width 1.0 applied to the norm of the 6-vector
residual (meters and radians mixed).  Solved by Gauss-Newton with Levenberg
damping as fallback.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geom import Pose, Twist, compose, inverse, se3_exp, se3_log
from .registration import robust_rho, robust_weight

LOSS_WIDTH = 1.0
MAX_ITERATIONS = 50
STEP_TOLERANCE = 1e-10
_FD_STEP = 1e-6


@dataclass
class AbsoluteConstraint:
    """Scan-to-map result: the frame's measured pose in the map frame."""

    measured_pose: Pose
    loss: str = "tukey"


@dataclass
class RelativeConstraint:
    """Scan-to-scan result: measured delta from the fixed previous pose."""

    anchor_pose: Pose
    measured_delta: Pose
    loss: str = "cauchy"


def absolute_residual(x: Pose, z: Pose) -> np.ndarray:
    """log(z^-1 x): zero iff the estimate matches the measurement."""
    return se3_log(compose(inverse(z), x)).as_vector()


def relative_residual(x_prev: Pose, x: Pose, z_delta: Pose) -> np.ndarray:
    """log(z^-1 (x_prev^-1 x)): zero iff x equals x_prev composed with z."""
    return se3_log(compose(inverse(z_delta), compose(inverse(x_prev), x))).as_vector()


@dataclass
class OptimizeResult:
    pose: Pose
    weights: dict[str, float]
    converged: bool
    iterations: int
    cost: float


def _numeric_jacobian(fn: Callable[[Pose], np.ndarray], x: Pose) -> np.ndarray:
    """Central-difference 6x6 Jacobian wrt a left-multiplicative twist."""
    J = np.zeros((6, 6))
    for k in range(6):
        dv = np.zeros(6)
        dv[k] = _FD_STEP
        fp = fn(compose(se3_exp(Twist.from_vector(dv)), x))
        fm = fn(compose(se3_exp(Twist.from_vector(-dv)), x))
        J[:, k] = (fp - fm) / (2.0 * _FD_STEP)
    return J


def optimize_frame(
    x_init: Pose,
    absolute: Optional[AbsoluteConstraint] = None,
    relative: Optional[RelativeConstraint] = None,
    translation_scale: float = 1.0,
    rotation_scale: float = 1.0,
) -> OptimizeResult:
    """Minimize the robustified constraint residuals over the current pose.

    The optional residual scales weight the translational / rotational blocks
    before the norm is taken; both default to 1 (off).
    """
    if absolute is None and relative is None:
        raise ValueError("at least one constraint is required")

    scale = np.concatenate([np.full(3, translation_scale), np.full(3, rotation_scale)])
    terms: list[tuple[str, Callable[[Pose], np.ndarray], str]] = []
    if absolute is not None:
        z = absolute.measured_pose
        terms.append(("absolute", lambda p, z=z: absolute_residual(p, z) * scale, absolute.loss))
    if relative is not None:
        anchor, delta = relative.anchor_pose, relative.measured_delta
        terms.append(
            (
                "relative",
                lambda p, a=anchor, d=delta: relative_residual(a, p, d) * scale,
                relative.loss,
            )
        )

    def total_cost(p: Pose) -> float:
        return sum(robust_rho(loss, np.linalg.norm(fn(p)), LOSS_WIDTH) for _, fn, loss in terms)

    x = x_init
    cost_x = total_cost(x)
    lam = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        H = np.zeros((6, 6))
        b = np.zeros(6)
        for _, fn, loss in terms:
            f = fn(x)
            w = robust_weight(loss, float(np.linalg.norm(f)), LOSS_WIDTH)
            if w == 0.0:
                continue
            J = _numeric_jacobian(fn, x)
            H += w * (J.T @ J)
            b += w * (J.T @ f)
        if np.linalg.norm(b) < 1e-12:
            converged = True
            break

        stepped = False
        delta = np.zeros(6)
        for _ in range(8):
            try:
                delta = np.linalg.solve(H + lam * np.eye(6), -b)
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-8)
                continue
            if not np.all(np.isfinite(delta)):
                lam = max(lam * 10.0, 1e-8)
                continue
            x_trial = compose(se3_exp(Twist.from_vector(delta)), x)
            cost_trial = total_cost(x_trial)
            if cost_trial <= cost_x + 1e-15:
                x, cost_x = x_trial, cost_trial
                lam = lam / 3.0 if lam > 1e-12 else 0.0
                stepped = True
                break
            lam = max(lam * 10.0, 1e-8)
        if not stepped:
            break
        if np.linalg.norm(delta) < STEP_TOLERANCE:
            converged = True
            break

    weights = {
        name: float(robust_weight(loss, float(np.linalg.norm(fn(x))), LOSS_WIDTH))
        for name, fn, loss in terms
    }
    return OptimizeResult(x, weights, converged, iterations, cost_x)

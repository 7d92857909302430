"""Random instance generation with controlled conditioning.

Matrices are Gaussian rescaled to a target spectral norm, the target vector is
planted (b = h(A2 f(x_plant)) + noise), and the ridge weights default to the
strong-convexity recipe

    w_i^2 = 100 + 12 R_h L_h R (R + R_h) + l_target / sigma_min(A1)^2

evaluated with the measured (desk-scale) norms, which keeps lambda_min of the
total Hessian at or above l_target everywhere the kernel bound holds.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Activation, ProblemInstance, activation_eval, estimate_activation_bound

__all__ = ["gen_instance", "ridge_recipe", "softmax"]

_W2_CAP = 1e300


def softmax(z: np.ndarray) -> np.ndarray:
    s = np.exp(z - np.max(z))
    return s / s.sum()


def ridge_recipe(R: float, R_h: float, L_h: float, sigma_min: float, l_target: float) -> float:
    """The common w_i^2 from the strong-convexity recipe, clipped to float range."""
    if sigma_min <= 0.0:
        raise ValueError("A1 must have full column rank for the ridge recipe (need n >= d)")
    w2 = 100.0 + 12.0 * R_h * L_h * R * (R + R_h) + l_target / sigma_min**2
    return min(w2, _W2_CAP)


def gen_instance(
    n: int,
    m: int,
    d: int,
    activation: str,
    seed: int,
    *,
    noise: float = 0.0,
    r_target: float = 1.5,
    l_target: float = 1.0,
    beta: float = 0.05,
    w: np.ndarray | None = None,
) -> tuple[ProblemInstance, np.ndarray]:
    """Build a random instance; returns (instance, x_plant).

    The planted point controls conditioning only: b is exact at x_plant when
    noise = 0, but the ridge term moves the minimizer of the total loss away
    from it.
    """
    if min(n, m, d) < 1:
        raise ValueError("n, m, d must all be >= 1")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    A1 = rng.standard_normal((n, d))
    A1 *= r_target / max(float(np.linalg.norm(A1, 2)), 1e-300)
    A2 = rng.standard_normal((m, n))
    A2 *= r_target / max(float(np.linalg.norm(A2, 2)), 1e-300)
    x_plant = rng.standard_normal(d)
    x_plant *= 0.5 * r_target / max(float(np.linalg.norm(x_plant)), 1e-300)

    act = Activation(activation, R_h=estimate_activation_bound(activation, A2))
    hval, _, _ = activation_eval(act, A2 @ softmax(A1 @ x_plant))
    b = hval + noise * rng.standard_normal(m)

    if w is None:
        sigma_min = float(np.linalg.svd(A1, compute_uv=False)[-1])
        w2 = ridge_recipe(r_target, act.R_h, act.L_h, sigma_min, l_target)
        w = np.full(n, math.sqrt(w2))
    else:
        w = np.asarray(w, dtype=float)

    inst = ProblemInstance(A1=A1, A2=A2, b=b, w=w, activation=act, R=r_target, beta=beta)
    return inst, x_plant

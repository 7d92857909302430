"""Closed-form second derivatives.

The data-term Hessian factors as H_L = A1^T B A1 with an n x n curvature
kernel

    B = J Qt J + J S J + 2 s f f^T - f v^T - v f^T + diag(v) - s diag(f),

where J = diag(f) - f f^T, Qt = Q2^T Q2, S = A2^T diag(h''(A2 f) o c) A2,
v = f o q2 and s = <q2, f>. The kernel is assembled in this symmetric form so
that A1^T B A1 reproduces the per-entry second derivative exactly; the
per-entry formula (symmetrized in its mixed term) is kept alongside as the
reference route.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .derivatives import eval_Q2_q2, eval_p
from .model import ModelState, ProblemInstance

__all__ = [
    "HessianBundle",
    "hess_f_pair",
    "hess_L",
    "hess_tot",
    "hess_L_entry",
    "b_terms",
    "B_TERM_NAMES",
    "g_terms",
]

# above this many softmax coordinates the n x n kernel is skipped by default
ENTRYWISE_THRESHOLD = 2000

B_TERM_NAMES = tuple(f"B{i}" for i in range(1, 13))


@dataclass
class HessianBundle:
    B: np.ndarray | None  # n x n kernel, None when accumulated entrywise
    H_L: np.ndarray  # d x d
    H_tot: np.ndarray  # d x d
    w2_diag: np.ndarray  # n, entries w_i^2
    terms: list[np.ndarray] | None = None  # twelve addends of B, on request


def hess_f_pair(state: ModelState, inst: ProblemInstance, i: int, j: int) -> np.ndarray:
    """Second derivative of the softmax vector along coordinates (i, j).

    Symmetric form: 2<f,a_i><f,a_j> f - <f,a_i o a_j> f - <f,a_j>(f o a_i)
    - <f,a_i>(f o a_j) + a_i o f o a_j, with a_k = A1[:, k].
    """
    if not (0 <= i < inst.d and 0 <= j < inst.d):
        raise IndexError(f"column indices must lie in [0, {inst.d}), got ({i}, {j})")
    f = state.f
    ai = inst.A1[:, i]
    aj = inst.A1[:, j]
    fi = float(f @ ai)
    fj = float(f @ aj)
    return (
        2.0 * fi * fj * f
        - float(f @ (ai * aj)) * f
        - fj * (f * ai)
        - fi * (f * aj)
        + ai * f * aj
    )


def _kernel_pieces(state: ModelState, inst: ProblemInstance):
    Q2, q2 = eval_Q2_q2(state, inst)
    f = state.f
    v = f * q2
    s = float(q2 @ f)
    curv = state.hdoubleprime * state.c  # m, the h'' o c diagonal
    return Q2, q2, f, v, s, curv


def _assemble_B(state: ModelState, inst: ProblemInstance) -> np.ndarray:
    Q2, q2, f, v, s, curv = _kernel_pieces(state, inst)
    n = inst.n
    J = np.diag(f) - np.outer(f, f)
    Qt = Q2.T @ Q2
    S = inst.A2.T @ (curv[:, None] * inst.A2)
    B = J @ Qt @ J + J @ S @ J
    B += 2.0 * s * np.outer(f, f)
    B -= np.outer(f, v)
    B -= np.outer(v, f)
    B += np.diag(v)
    B -= s * np.diag(f)
    return B


def _hess_L_entrywise(state: ModelState, inst: ProblemInstance) -> np.ndarray:
    """H_L without materializing the n x n kernel (d x d work arrays only)."""
    P = eval_p(state, inst)
    Q2, q2, f, v, s, curv = _kernel_pieces(state, inst)
    QP = Q2 @ P  # m x d
    G = inst.A2 @ P  # m x d
    a = inst.A1.T @ f  # d, a_i = <f, A1[:,i]>
    t = inst.A1.T @ v  # d, t_i = <q2, f o A1[:,i]>
    K = inst.A1.T @ (f[:, None] * inst.A1)  # K[i,j] = <f, a_i o a_j>
    M2 = inst.A1.T @ (v[:, None] * inst.A1)  # M2[i,j] = <q2, a_i o f o a_j>
    H = QP.T @ QP
    H += G.T @ (curv[:, None] * G)
    H += 2.0 * s * np.outer(a, a)
    H -= s * K
    H -= np.outer(t, a) + np.outer(a, t)
    H += M2
    return H


def hess_L_entry(state: ModelState, inst: ProblemInstance, i: int, j: int) -> float:
    """Literal per-entry second derivative, the reference for the kernel route."""
    P = eval_p(state, inst)
    Q2, q2 = eval_Q2_q2(state, inst)
    pi, pj = P[:, i], P[:, j]
    a2pi = inst.A2 @ pi
    a2pj = inst.A2 @ pj
    term1 = float((Q2 @ pj) @ (Q2 @ pi))
    term2 = float(np.sum(state.c * state.hdoubleprime * a2pj * a2pi))
    term3 = float(state.c @ (Q2 @ hess_f_pair(state, inst, i, j)))
    return term1 + term2 + term3


def hess_L(
    state: ModelState,
    inst: ProblemInstance,
    *,
    with_terms: bool = False,
    entrywise: bool | None = None,
) -> HessianBundle:
    """Hessian of the data term plus the assembled total Hessian.

    ``entrywise`` selects the accumulation that avoids the n x n kernel; by
    default it engages for n > ENTRYWISE_THRESHOLD. Both routes agree to
    rounding; the kernel route also exposes B for diagnostics and sketching.
    """
    if entrywise is None:
        entrywise = inst.n > ENTRYWISE_THRESHOLD and not with_terms
    w2 = inst.w * inst.w
    if entrywise:
        H_L = _hess_L_entrywise(state, inst)
        B = None
        terms = None
    else:
        B = _assemble_B(state, inst)
        H_L = inst.A1.T @ B @ inst.A1
        terms = b_terms(state, inst) if with_terms else None
    H_tot = H_L + inst.A1.T @ (w2[:, None] * inst.A1)
    return HessianBundle(B=B, H_L=H_L, H_tot=H_tot, w2_diag=w2, terms=terms)


def hess_tot(state: ModelState, inst: ProblemInstance, **kwargs) -> HessianBundle:
    """Total Hessian H_tot = H_L + A1^T diag(w o w) A1."""
    return hess_L(state, inst, **kwargs)


def b_terms(state: ModelState, inst: ProblemInstance) -> list[np.ndarray]:
    """The twelve addends of the curvature kernel, in corrected form.

    Signs and transposes follow the per-entry second derivative (the mixed
    term appears symmetrized, split across the two rank-one products of B6):

      B1  =  diag(f) Qt diag(f)          B7  =  diag(f o q2)
      B2  = -diag(f) Qt f f^T            B8  =  diag(f) S diag(f)
      B3  = -f f^T Qt diag(f)            B9  = -diag(f) S f f^T
      B4  =  (f^T Qt f) f f^T            B10 = -f f^T S diag(f)
      B5  =  2 <q2, f> f f^T             B11 =  (f^T S f) f f^T
      B6  = -f (f o q2)^T - (f o q2) f^T B12 = -<q2, f> diag(f)

    with Qt = Q2^T Q2 and S = A2^T diag(h''(A2 f) o c) A2. Their sum equals
    the assembled kernel to rounding.
    """
    Q2, q2, f, v, s, curv = _kernel_pieces(state, inst)
    Qt = Q2.T @ Q2
    S = inst.A2.T @ (curv[:, None] * inst.A2)
    df = np.diag(f)
    ff = np.outer(f, f)
    return [
        df @ Qt @ df,
        -df @ Qt @ ff,
        -ff @ Qt @ df,
        float(f @ Qt @ f) * ff,
        2.0 * s * ff,
        -np.outer(f, v) - np.outer(v, f),
        np.diag(v),
        df @ S @ df,
        -df @ S @ ff,
        -ff @ S @ df,
        float(f @ S @ f) * ff,
        -s * np.diag(f),
    ]


def g_terms(state: ModelState, inst: ProblemInstance) -> dict[str, np.ndarray]:
    """The six d x d pieces of the per-entry Hessian, in literal form.

    H_L = G1 + G2 + G3 - G4 - G5 + G6 up to the symmetrization of G5 (the
    literal G5 = 2 a t^T is one-sided; the assembled Hessian uses
    (a t^T + t a^T)). These feed the per-piece Lipschitz tightness probes.
    """
    P = eval_p(state, inst)
    Q2, q2, f, v, s, curv = _kernel_pieces(state, inst)
    QP = Q2 @ P
    G = inst.A2 @ P
    a = inst.A1.T @ f
    t = inst.A1.T @ v
    K = inst.A1.T @ (f[:, None] * inst.A1)
    M2 = inst.A1.T @ (v[:, None] * inst.A1)
    return {
        "G1": QP.T @ QP,
        "G2": G.T @ (curv[:, None] * G),
        "G3": 2.0 * s * np.outer(a, a),
        "G4": s * K,
        "G5": 2.0 * np.outer(a, t),
        "G6": M2,
    }

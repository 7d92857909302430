"""Analytic bound constants and the empirical probes that measure them.

Every constant is carried in log space: already at R = 4 the formulas contain
exp(64), and the Hessian-Lipschitz constant overflows float64 long before the
measured quantities do. Tightness ratios (measured / bound) are therefore
formed by subtracting logs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .derivatives import grad
from .hessian import g_terms, hess_L
from .model import DenominatorFloorWarning, ModelState, ProblemInstance, eval_forward
from .oracle import spectral
from .serialize import SCHEMA_VERSION

__all__ = ["LogConstant", "BoundReport", "compute_constants", "constants_from_params", "probe_empirical", "measured_radius"]

_LN10 = math.log(10.0)

NORM_KEYS = ("f", "c", "Q2", "q2", "p")
LIPSCHITZ_KEYS = (
    "u",
    "alpha",
    "alpha_inv",
    "f",
    "c",
    "Q2",
    "q2",
    "g",
    "p",
    "G1",
    "G2",
    "G3",
    "G4",
    "G5",
    "G6",
)


@dataclass(frozen=True, order=True)
class LogConstant:
    """A nonnegative constant stored as its natural log (-inf encodes zero)."""

    log_value: float

    @classmethod
    def from_value(cls, v: float) -> "LogConstant":
        if v < 0:
            raise ValueError("LogConstant holds nonnegative values")
        return cls(-math.inf if v == 0.0 else math.log(v))

    @property
    def value(self) -> float:
        """The plain float value; inf when it overflows float64."""
        if self.log_value == -math.inf:
            return 0.0
        if self.log_value > 709.0:
            return math.inf
        return math.exp(self.log_value)

    @property
    def log10(self) -> float:
        return self.log_value / _LN10

    def mantissa_exp10(self) -> tuple[float, int]:
        if self.log_value == -math.inf:
            return 0.0, 0
        e = math.floor(self.log10)
        return 10.0 ** (self.log10 - e), int(e)

    def holds(self, measured: float) -> bool:
        """measured <= this bound, compared in log space."""
        if measured <= 0.0:
            return True
        return math.log(measured) <= self.log_value

    def tightness(self, measured: float) -> float:
        """measured / bound, 0 for zero measurements, inf for a zero bound."""
        if measured <= 0.0:
            return 0.0
        if self.log_value == -math.inf:
            return math.inf
        r = math.log(measured) - self.log_value
        return math.exp(r) if r < 709.0 else math.inf

    def to_json(self) -> dict:
        m, e = self.mantissa_exp10()
        v = self.value
        return {
            "log10": None if self.log_value == -math.inf else self.log10,
            "mantissa": m,
            "exp10": e,
            "value": None if math.isinf(v) else v,
        }


def _lc(*logs: float) -> LogConstant:
    return LogConstant(sum(logs))


def _ln(v: float) -> float:
    return -math.inf if v == 0.0 else math.log(v)


def constants_from_params(n: int, R: float, beta: float, L_h: float, R_h: float) -> dict[str, LogConstant]:
    """All analytic constants as a flat name -> LogConstant map.

    ``R_f`` is 2 beta^-2 n R exp(2 R^2); the Hessian-Lipschitz constant is
    59 (R + R_h) n^2 exp(4 R^2) beta^-4 R^5 R_h^2 R_f L_h; the kernel spectrum
    bound is 12 R_h L_h R (R + R_h). Per-piece norms and Lipschitz constants
    follow the same derivations.
    """
    ln_n, ln_R, ln_b = math.log(n), _ln(R), math.log(beta)
    ln_Lh, ln_Rh, ln_RRh = _ln(L_h), _ln(R_h), _ln(R + R_h)
    R2 = R * R
    log_Rf = math.log(2.0) - 2.0 * ln_b + ln_n + ln_R + 2.0 * R2
    out: dict[str, LogConstant] = {}
    out["R_f"] = LogConstant(log_Rf)
    out["M"] = _lc(
        math.log(59.0), ln_RRh, 2.0 * ln_n, 4.0 * R2, -4.0 * ln_b, 5.0 * ln_R, 2.0 * ln_Rh, log_Rf, ln_Lh
    )
    out["psd_bound"] = _lc(math.log(12.0), ln_Rh, ln_Lh, ln_R, ln_RRh)
    # norms of the building blocks
    out["norm_f"] = _lc(-ln_b, 0.5 * ln_n, R2)
    out["norm_c"] = LogConstant(ln_RRh)
    out["norm_Q2"] = _lc(ln_R, ln_Rh)
    out["norm_q2"] = _lc(ln_R, ln_Rh, ln_RRh)
    out["norm_p"] = LogConstant(log_Rf)
    # Lipschitz constants of the building blocks
    out["lip_u"] = _lc(ln_R, R2)
    out["lip_alpha"] = _lc(0.5 * ln_n, ln_R, R2)
    out["lip_alpha_inv"] = _lc(-2.0 * ln_b, 0.5 * ln_n, ln_R, R2)
    out["lip_f"] = LogConstant(log_Rf)
    out["lip_c"] = _lc(ln_Lh, ln_R, log_Rf)
    out["lip_Q2"] = _lc(2.0 * ln_R, log_Rf, ln_Lh)
    out["lip_q2"] = _lc(math.log(2.0), 2.0 * ln_R, log_Rf, ln_Rh, ln_Lh, ln_RRh)
    out["lip_g"] = _lc(
        math.log(7.0), -2.0 * ln_b, ln_n, ln_Lh, ln_Rh, log_Rf, 2.0 * ln_R, ln_RRh, 5.0 * R2
    )
    out["lip_p"] = _lc(math.log(3.0), ln_R, log_Rf, -ln_b, 0.5 * ln_n, R2)
    # Lipschitz constants of the six Hessian pieces
    out["lip_G1"] = _lc(
        math.log(8.0), 2.0 * ln_Rh, log_Rf, 5.0 * ln_R, ln_Lh, ln_RRh, -4.0 * ln_b, 2.0 * ln_n, 4.0 * R2
    )
    out["lip_G2"] = _lc(
        math.log(24.0), ln_Rh, log_Rf, 4.0 * ln_R, ln_RRh, -4.0 * ln_b, 2.0 * ln_n, 4.0 * R2
    )
    g3 = _lc(math.log(10.0), ln_RRh, 4.0 * ln_R, log_Rf, ln_Lh, -3.0 * ln_b, 1.5 * ln_n, 3.0 * R2)
    out["lip_G3"] = g3
    out["lip_G4"] = _lc(math.log(4.0), ln_RRh, 4.0 * ln_R, log_Rf, ln_Lh, -ln_b, 0.5 * ln_n, R2)
    out["lip_G5"] = g3
    out["lip_G6"] = _lc(math.log(3.0), ln_RRh, 4.0 * ln_R, log_Rf, ln_Lh, -ln_b, 0.5 * ln_n, R2)
    # per-addend spectrum bounds of the curvature kernel; the four S-terms are
    # stated with a single factor of ||A2|| although the addend carries two,
    # so these are reported but never asserted (only the total bound is).
    q2sq = _lc(2.0 * ln_R, 2.0 * ln_Rh)
    mid = _lc(math.log(2.0 * (L_h + 1.0)), ln_R, ln_Rh)
    sterm = _lc(ln_RRh, ln_Lh, ln_R)
    out["term_B1"] = q2sq
    out["term_B2"] = q2sq
    out["term_B3"] = q2sq
    out["term_B4"] = q2sq
    out["term_B5"] = mid
    out["term_B6"] = mid
    out["term_B7"] = mid
    out["term_B8"] = sterm
    out["term_B9"] = sterm
    out["term_B10"] = sterm
    out["term_B11"] = sterm
    out["term_B12"] = _lc(ln_Rh, ln_R, ln_RRh)
    return out


def measured_radius(inst: ProblemInstance, xs=()) -> float:
    """The norm budget actually exercised: matrix norms, probe ||x||, ||b||."""
    vals = [
        float(np.linalg.norm(inst.A1, 2)),
        float(np.linalg.norm(inst.A2, 2)),
        float(np.linalg.norm(inst.b)),
    ]
    vals.extend(float(np.linalg.norm(x)) for x in xs)
    return max(vals)


@dataclass
class BoundReport:
    n: int
    R_used: float
    beta_used: float
    L_h: float
    R_h: float
    analytic: dict[str, LogConstant]
    empirical: dict[str, float] = field(default_factory=dict)
    tightness: dict[str, float] = field(default_factory=dict)
    n_admissible: int = 0
    n_excluded: int = 0
    lambda_min_B: float | None = None
    lambda_max_B: float | None = None

    @property
    def R_f(self) -> LogConstant:
        return self.analytic["R_f"]

    @property
    def M(self) -> LogConstant:
        return self.analytic["M"]

    @property
    def psd_bound(self) -> LogConstant:
        return self.analytic["psd_bound"]

    @property
    def M_empirical(self) -> float | None:
        return self.empirical.get("M")

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "R_used": self.R_used,
            "beta_used": self.beta_used,
            "L_h": self.L_h,
            "R_h": self.R_h,
            "n_admissible": self.n_admissible,
            "n_excluded": self.n_excluded,
            "lambda_min_B": self.lambda_min_B,
            "lambda_max_B": self.lambda_max_B,
            "analytic": {k: v.to_json() for k, v in sorted(self.analytic.items())},
            "empirical": dict(sorted(self.empirical.items())),
            "tightness": dict(sorted(self.tightness.items())),
        }


def compute_constants(inst: ProblemInstance, *, R: float | None = None, beta: float | None = None) -> BoundReport:
    """Analytic part of the report; no probe points are evaluated."""
    R_used = measured_radius(inst) if R is None else R
    beta_used = inst.beta if beta is None else beta
    act = inst.activation
    analytic = constants_from_params(inst.n, R_used, beta_used, act.L_h, act.R_h)
    return BoundReport(
        n=inst.n, R_used=R_used, beta_used=beta_used, L_h=act.L_h, R_h=act.R_h, analytic=analytic
    )


def _admissible_states(inst: ProblemInstance, sample_points):
    states, excluded = [], 0
    log_beta = math.log(inst.beta)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DenominatorFloorWarning)
        for x in sample_points:
            st = eval_forward(inst, np.asarray(x, dtype=float))
            if st.log_alpha >= log_beta:
                states.append(st)
            else:
                excluded += 1
    return states, excluded


def probe_empirical(inst: ProblemInstance, sample_points) -> BoundReport:
    """Measure every bounded quantity at the admissible probe points.

    Points whose softmax denominator falls below the declared beta are
    excluded and counted. Fewer than two admissible points cannot support the
    pairwise Lipschitz probes and is an error.
    """
    states, excluded = _admissible_states(inst, sample_points)
    if len(states) < 2:
        raise ValueError(
            f"need at least 2 admissible probe points for Lipschitz probes, got {len(states)}"
        )
    R_used = measured_radius(inst, [st.x for st in states])
    beta_used = min(st.alpha for st in states)
    report = compute_constants(inst, R=R_used, beta=beta_used)
    report.n_admissible = len(states)
    report.n_excluded = excluded

    per_point = []
    lam_min, lam_max = math.inf, -math.inf
    for st in states:
        gb = grad(st, inst)
        hb = hess_L(st, inst, entrywise=False)
        lo, hi, _ = spectral(hb.B)
        lam_min, lam_max = min(lam_min, lo), max(lam_max, hi)
        per_point.append(
            {
                "state": st,
                "u": st.u,
                "alpha": st.alpha,
                "alpha_inv": 1.0 / st.alpha,
                "f": st.f,
                "c": st.c,
                "Q2": gb.Q2,
                "q2": gb.q2,
                "g": gb.grad_L,
                "P": gb.P,
                "H_L": hb.H_L,
                "G": g_terms(st, inst),
            }
        )

    emp: dict[str, float] = {
        "norm_f": max(float(np.linalg.norm(p["f"])) for p in per_point),
        "norm_c": max(float(np.linalg.norm(p["c"])) for p in per_point),
        "norm_Q2": max(float(np.linalg.norm(p["Q2"], 2)) for p in per_point),
        "norm_q2": max(float(np.linalg.norm(p["q2"])) for p in per_point),
        "norm_p": max(float(np.max(np.linalg.norm(p["P"], axis=0))) for p in per_point),
        "psd_bound": max(abs(lam_min), abs(lam_max)),
    }
    report.lambda_min_B = lam_min
    report.lambda_max_B = lam_max

    # pairwise Lipschitz ratios; spectral norm for matrices, l2 for vectors
    def pairmax(key, norm) -> float:
        best = 0.0
        for i in range(len(per_point)):
            for j in range(i + 1, len(per_point)):
                dx = float(np.linalg.norm(per_point[i]["state"].x - per_point[j]["state"].x))
                if dx == 0.0:
                    continue
                best = max(best, norm(per_point[i][key], per_point[j][key]) / dx)
        return best

    vec = lambda a, b: float(np.linalg.norm(np.atleast_1d(a) - np.atleast_1d(b)))
    mat = lambda a, b: float(np.linalg.norm(a - b, 2))
    emp["lip_u"] = pairmax("u", vec)
    emp["lip_alpha"] = pairmax("alpha", vec)
    emp["lip_alpha_inv"] = pairmax("alpha_inv", vec)
    emp["lip_f"] = pairmax("f", vec)
    emp["lip_c"] = pairmax("c", vec)
    emp["lip_Q2"] = pairmax("Q2", mat)
    emp["lip_q2"] = pairmax("q2", vec)
    emp["lip_g"] = pairmax("g", vec)
    emp["lip_p"] = pairmax("P", lambda a, b: float(np.max(np.linalg.norm(a - b, axis=0))))
    emp["M"] = pairmax("H_L", mat)
    for gk in ("G1", "G2", "G3", "G4", "G5", "G6"):
        emp[f"lip_{gk}"] = pairmax("G", lambda a, b, gk=gk: float(np.linalg.norm(a[gk] - b[gk], 2)))

    report.empirical = emp
    report.tightness = {
        k: report.analytic[k].tightness(v) for k, v in emp.items() if k in report.analytic
    }
    report.tightness["M"] = report.analytic["M"].tightness(emp["M"])
    return report

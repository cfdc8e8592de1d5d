"""Normalizing sequences and prefactors for the fluctuation statistics.

The scale c_alpha(t) is the canonical solution of t * ell(c) = c**alpha for
the two supported slowly varying factors (constant, kappa*ln).  All
prefactors are computed and exchanged in log space; exponentiation happens
once, when samples are normalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import SlowlyVarying


class NormalizationError(ValueError):
    pass


def solve_c_alpha(ell: SlowlyVarying, alpha: float, t: float) -> float:
    """Solve t * ell(c) = c**alpha for c.

    Constant ell has the closed form (kappa*t)**(1/alpha).  For
    ell(x) = kappa*ln(x) the map c -> c**alpha - t*kappa*ln(c) has two roots;
    the normalizing sequence is the larger one, past the minimum of the map
    at c = (t*kappa/alpha)**(1/alpha), where the bracket [peak, hi] gives a
    sign change for bisection.
    """
    if t <= 0:
        raise NormalizationError("c_alpha needs t > 0")
    if not 1.0 < alpha <= 2.0:
        raise NormalizationError("c_alpha needs alpha in (1, 2]")
    if ell.kind == "constant":
        return (ell.kappa * t) ** (1.0 / alpha)
    if ell.kind != "log":
        raise NormalizationError(f"unsupported slowly varying kind {ell.kind!r}")

    kappa = ell.kappa

    def g(c: float) -> float:
        return c ** alpha - t * kappa * math.log(c)

    lo = max((t * kappa / alpha) ** (1.0 / alpha), 1.0 + 1e-12)
    hi = max(t ** (2.0 / alpha) * (1.0 + kappa * max(math.log(t), 1.0)), 2.0 * lo)
    if g(lo) > 0 or g(hi) < 0:
        raise NormalizationError("no sign change in bisection bracket; misconfigured ell")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi:
            break
    return 0.5 * (lo + hi)


def theorem_prefactor_log(j_u: int, m: float, t: float, c_value: float, alpha: float) -> float:
    """log of (j_u - 1)! * m**(j_u + 1/alpha) / (t**(j_u - 1) * c_value)."""
    if j_u < 1 or m <= 0 or t <= 0 or c_value <= 0:
        raise NormalizationError("prefactor needs j_u >= 1 and positive m, t, c")
    return (math.lgamma(j_u) + (j_u + 1.0 / alpha) * math.log(m)
            - (j_u - 1) * math.log(t) - math.log(c_value))


def prop11_prefactor_log(j: int, j_u: int, s2: float, m: float, t: float) -> float:
    """log of j**(1/2) * (j_u - 1)! / (s2 * m**(-2*j_u - 1) * t**(2*j_u - 1))**(1/2)."""
    if j < 1 or j_u < 1 or s2 <= 0 or m <= 0 or t <= 0:
        raise NormalizationError("prefactor needs j, j_u >= 1 and positive s2, m, t")
    return (0.5 * math.log(j) + math.lgamma(j_u)
            - 0.5 * (math.log(s2) - (2 * j_u + 1) * math.log(m) + (2 * j_u - 1) * math.log(t)))


def j_of_t(t: float, p: float) -> int:
    """Generation-scale preset floor(t**p)."""
    if t <= 0 or p < 0:
        raise NormalizationError("j(t) preset needs t > 0 and p >= 0")
    return max(int(math.floor(t ** p)), 1)


def default_j_exponent(gamma: float) -> float:
    """Inside the admissible window: 80% of the (gamma - 1)/2 growth cap."""
    return 0.8 * (gamma - 1.0) / 2.0


@dataclass(frozen=True)
class NormalizationPlan:
    """Per-(t, u) generation indices and log prefactors for one experiment."""

    alpha: float
    m: float
    gamma: float
    t: float
    j_fn: str
    j_t: int
    u_points: tuple
    j_u: tuple = field(init=False)
    log_prefactor: tuple = field(init=False)
    c_value: float = field(init=False)
    mode: str = "theorem"     # "theorem" | "baseline"
    s2: float = 0.0           # step variance (baseline mode only)
    ell_kind: str = "constant"
    ell_kappa: float = 1.0

    def __post_init__(self):
        if self.j_t < 1:
            raise NormalizationError("j(t) must be at least 1")
        jus = tuple(int(math.floor(self.j_t * u)) for u in self.u_points)
        if any(ju < 1 for ju in jus):
            raise NormalizationError("floor(j(t) * u) must be >= 1 for every u point")
        if self.mode == "theorem":
            ell = SlowlyVarying(self.ell_kind, self.ell_kappa)
            c_val = solve_c_alpha(ell, self.alpha, self.t / self.j_t)
            logs = tuple(theorem_prefactor_log(ju, self.m, self.t, c_val, self.alpha) for ju in jus)
        elif self.mode == "baseline":
            c_val = math.sqrt(self.t / self.j_t)
            logs = tuple(prop11_prefactor_log(self.j_t, ju, self.s2, self.m, self.t) for ju in jus)
        else:
            raise NormalizationError(f"unknown normalization mode {self.mode!r}")
        object.__setattr__(self, "j_u", jus)
        object.__setattr__(self, "log_prefactor", logs)
        object.__setattr__(self, "c_value", c_val)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "m": self.m,
            "gamma": self.gamma,
            "t": self.t,
            "j_fn": self.j_fn,
            "j_t": self.j_t,
            "u_points": list(self.u_points),
            "j_u": list(self.j_u),
            "log_prefactor": list(self.log_prefactor),
            "c_value": self.c_value,
            "mode": self.mode,
            "s2": self.s2,
            "ell": {"kind": self.ell_kind, "kappa": self.ell_kappa},
        }


def make_plan(model, report, t: float, p: float, u_points, mode: str = "theorem") -> NormalizationPlan:
    """Build the per-t normalization plan from a model and its condition report."""
    jt = j_of_t(t, p)
    if mode == "theorem":
        if report.ell is None:
            raise NormalizationError("theorem normalization needs a heavy-tailed step law")
        return NormalizationPlan(
            alpha=report.alpha, m=model.m, gamma=model.gamma, t=t,
            j_fn=f"floor(t^{p:g})", j_t=jt, u_points=tuple(u_points),
            mode="theorem", ell_kind=report.ell.kind, ell_kappa=report.ell.kappa,
        )
    s2 = model.xi.variance
    if not math.isfinite(s2) or s2 <= 0:
        raise NormalizationError("baseline normalization needs finite positive step variance")
    return NormalizationPlan(
        alpha=2.0, m=model.m, gamma=model.gamma, t=t,
        j_fn=f"floor(t^{p:g})", j_t=jt, u_points=tuple(u_points),
        mode="baseline", s2=s2,
    )

"""Joint law of the step/perturbation pair (xi, eta).

A model declares the two marginal families, a dependence mode, and the
tail-balance exponent gamma used by the fluctuation normalization.  Derived
constants (mean step, stable index, slowly varying tail factor) are computed
in closed form at construction time and the model is immutable afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaln

from .sampling import exponential_inv, pareto_inv

XI_KINDS = ("pareto", "pareto_alpha2", "exponential", "deterministic")
ETA_KINDS = ("exponential", "pareto", "deterministic")

# integer codes consumed by the jit tree kernel
FAMILY_CODES = {"pareto": 0, "pareto_alpha2": 1, "exponential": 2, "deterministic": 3}
DEP_CODES = {"independent": 0, "comonotone": 1, "equal": 2}


class ModelError(ValueError):
    """Invalid family parameters or an inadmissible gamma."""


@dataclass(frozen=True)
class Family:
    """One positive marginal family with closed-form CDF and partial mean."""

    kind: str
    alpha: float = 0.0   # pareto tail index
    x_m: float = 0.0     # pareto scale
    rate: float = 0.0    # exponential rate
    value: float = 0.0   # deterministic constant

    def __post_init__(self):
        if self.kind == "pareto":
            if self.x_m <= 0:
                raise ModelError("pareto scale x_m must be positive")
            if not 1.0 < self.alpha:
                raise ModelError("pareto tail index must exceed 1 (finite mean required)")
        elif self.kind == "pareto_alpha2":
            if self.x_m <= 0:
                raise ModelError("pareto_alpha2 scale x_m must be positive")
        elif self.kind == "exponential":
            if self.rate <= 0:
                raise ModelError("exponential rate must be positive")
        elif self.kind == "deterministic":
            if self.value <= 0:
                raise ModelError("deterministic value must be positive")
        else:
            raise ModelError(f"unknown family kind {self.kind!r}")

    # -- moments -----------------------------------------------------

    @property
    def mean(self) -> float:
        if self.kind == "pareto":
            return self.alpha * self.x_m / (self.alpha - 1.0)
        if self.kind == "pareto_alpha2":
            return 2.0 * self.x_m
        if self.kind == "exponential":
            return 1.0 / self.rate
        return self.value

    @property
    def variance(self) -> float:
        """Variance; inf for tail index <= 2."""
        if self.kind == "pareto":
            if self.alpha <= 2.0:
                return math.inf
            a, xm = self.alpha, self.x_m
            return a * xm * xm / ((a - 1.0) ** 2 * (a - 2.0))
        if self.kind == "pareto_alpha2":
            return math.inf
        if self.kind == "exponential":
            return 1.0 / self.rate ** 2
        return 0.0

    @property
    def tail_index(self) -> float:
        """Power-law tail index; inf for light tails."""
        if self.kind == "pareto":
            return self.alpha
        if self.kind == "pareto_alpha2":
            return 2.0
        return math.inf

    @property
    def atomic(self) -> bool:
        return self.kind == "deterministic"

    # -- distribution functions --------------------------------------

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind in ("pareto", "pareto_alpha2"):
            a = self.alpha if self.kind == "pareto" else 2.0
            with np.errstate(divide="ignore"):
                return np.where(x >= self.x_m, 1.0 - (np.maximum(x, self.x_m) / self.x_m) ** (-a), 0.0)
        if self.kind == "exponential":
            return np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)
        return np.where(x >= self.value, 1.0, 0.0)

    def partial_mean(self, x):
        """E[X 1{X <= x}], closed form per family."""
        x = np.asarray(x, dtype=float)
        if self.kind in ("pareto", "pareto_alpha2"):
            a = self.alpha if self.kind == "pareto" else 2.0
            xm = self.x_m
            m = a * xm / (a - 1.0)
            return np.where(x >= xm, m * (1.0 - (np.maximum(x, xm) / xm) ** (1.0 - a)), 0.0)
        if self.kind == "exponential":
            lx = self.rate * np.maximum(x, 0.0)
            return np.where(x > 0, (1.0 - np.exp(-lx) * (1.0 + lx)) / self.rate, 0.0)
        return np.where(x >= self.value, self.value, 0.0)

    def partial_power_mean(self, x, theta: float):
        """E[X^theta 1{X <= x}] for a power map marginal."""
        x = np.asarray(x, dtype=float)
        if self.kind in ("pareto", "pareto_alpha2"):
            a = self.alpha if self.kind == "pareto" else 2.0
            xm = self.x_m
            if abs(a - theta) < 1e-12:
                # E[X^a 1{X<=x}] = a xm^a ln(x/xm)
                return np.where(x >= xm, a * xm ** a * np.log(np.maximum(x, xm) / xm), 0.0)
            c = a * xm ** theta / (a - theta)
            val = c * (1.0 - (np.maximum(x, xm) / xm) ** (theta - a))
            return np.where(x >= xm, val, 0.0)
        if self.kind == "exponential":
            # lower incomplete gamma: E = rate^-theta * gamma(theta+1, rate*x) / Gamma(theta+1) * Gamma(theta+1)
            lx = self.rate * np.maximum(x, 0.0)
            full = math.exp(gammaln(theta + 1.0)) / self.rate ** theta
            return np.where(x > 0, full * gammainc(theta + 1.0, lx), 0.0)
        return np.where(x >= self.value, self.value ** theta, 0.0)

    def inv_cdf(self, u):
        if self.kind == "pareto":
            return pareto_inv(u, self.alpha, self.x_m)
        if self.kind == "pareto_alpha2":
            return pareto_inv(u, 2.0, self.x_m)
        if self.kind == "exponential":
            return exponential_inv(u, self.rate)
        return np.full_like(np.asarray(u, dtype=float), self.value) if np.ndim(u) else self.value

    def to_dict(self) -> dict:
        if self.kind == "pareto":
            return {"kind": "pareto", "alpha": self.alpha, "x_m": self.x_m}
        if self.kind == "pareto_alpha2":
            return {"kind": "pareto_alpha2", "x_m": self.x_m}
        if self.kind == "exponential":
            return {"kind": "exponential", "rate": self.rate}
        return {"kind": "deterministic", "value": self.value}

    @staticmethod
    def from_dict(d: dict) -> "Family":
        kind = d.get("kind")
        if kind == "pareto":
            return Family("pareto", alpha=float(d["alpha"]), x_m=float(d["x_m"]))
        if kind == "pareto_alpha2":
            return Family("pareto_alpha2", x_m=float(d["x_m"]))
        if kind == "exponential":
            return Family("exponential", rate=float(d["rate"]))
        if kind == "deterministic":
            return Family("deterministic", value=float(d["value"]))
        raise ModelError(f"unknown family kind {kind!r}")


@dataclass(frozen=True)
class SlowlyVarying:
    """Either a constant kappa or kappa * ln(x)."""

    kind: str  # "constant" | "log"
    kappa: float

    def __call__(self, x):
        if self.kind == "constant":
            return self.kappa * np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else self.kappa
        return self.kappa * np.log(x)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"{self.kappa:g}"
        return f"{self.kappa:g}*ln(t)"


@dataclass(frozen=True)
class ModelSpec:
    xi: Family
    eta: Family
    dependence: str = "independent"
    theta: float = 1.0   # comonotone exponent (eta = c * xi**theta)
    c: float = 1.0       # comonotone scale
    gamma: float = 2.0
    m: float = field(init=False)

    def __post_init__(self):
        if self.xi.kind not in XI_KINDS:
            raise ModelError(f"xi family {self.xi.kind!r} not supported")
        if self.dependence == "independent" and self.eta.kind not in ETA_KINDS:
            raise ModelError(f"eta family {self.eta.kind!r} not supported")
        if self.dependence not in DEP_CODES:
            raise ModelError(f"unknown dependence mode {self.dependence!r}")
        if self.dependence == "comonotone" and (self.c <= 0 or self.theta <= 0):
            raise ModelError("comonotone mode needs positive scale and exponent")
        object.__setattr__(self, "m", self.xi.mean)
        self._check_gamma()

    def _check_gamma(self):
        g = self.gamma
        if not 1.0 < g <= 2.0:
            raise ModelError("gamma must lie in (1, 2]")
        a = stable_index(self.xi)
        if a is not None and not (2.0 - 1.0 / a <= g <= a):
            raise ModelError(
                f"gamma={g:g} outside admissible range [{2.0 - 1.0 / a:g}, {a:g}] for stable index {a:g}"
            )

    # -- eta marginal under the dependence mode ----------------------

    def eta_marginal_cdf(self, x):
        if self.dependence == "independent":
            return self.eta.cdf(x)
        x = np.asarray(x, dtype=float)
        if self.dependence == "equal":
            return self.xi.cdf(x)
        b = (np.maximum(x, 0.0) / self.c) ** (1.0 / self.theta)
        return self.xi.cdf(b)

    def eta_marginal_partial_mean(self, x):
        if self.dependence == "independent":
            return self.eta.partial_mean(x)
        x = np.asarray(x, dtype=float)
        if self.dependence == "equal":
            return self.xi.partial_mean(x)
        b = (np.maximum(x, 0.0) / self.c) ** (1.0 / self.theta)
        return self.c * self.xi.partial_power_mean(b, self.theta)

    def eta_marginal_atomic(self) -> bool:
        if self.dependence == "independent":
            return self.eta.atomic
        return self.xi.atomic

    def eta_tail_index(self) -> float:
        if self.dependence == "independent":
            return self.eta.tail_index
        if self.dependence == "equal":
            return self.xi.tail_index
        return self.xi.tail_index / self.theta

    # -- sampling ----------------------------------------------------

    def pair_from_uniforms(self, u1, u2):
        xi = self.xi.inv_cdf(u1)
        if self.dependence == "independent":
            eta = self.eta.inv_cdf(u2)
        elif self.dependence == "equal":
            eta = xi
        else:
            eta = self.c * xi ** self.theta
        return xi, eta

    # -- serialization ----------------------------------------------

    def to_dict(self) -> dict:
        dep: object = self.dependence
        if self.dependence == "comonotone":
            dep = {"kind": "comonotone", "theta": self.theta, "c": self.c}
        return {"xi": self.xi.to_dict(), "eta": self.eta.to_dict(), "dependence": dep, "gamma": self.gamma}

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        dep = d.get("dependence", "independent")
        theta, c = 1.0, 1.0
        if isinstance(dep, dict):
            theta = float(dep.get("theta", 1.0))
            c = float(dep.get("c", 1.0))
            dep = dep.get("kind", "comonotone")
        return ModelSpec(
            xi=Family.from_dict(d["xi"]),
            eta=Family.from_dict(d["eta"]),
            dependence=dep,
            theta=theta,
            c=c,
            gamma=float(d.get("gamma", 2.0)),
        )

    def kernel_args(self) -> tuple:
        """Flat numeric encoding for the jit tree kernel."""
        xk = FAMILY_CODES[self.xi.kind]
        ek = FAMILY_CODES[self.eta.kind] if self.dependence == "independent" else 0
        def enc(f: Family):
            if f.kind == "pareto":
                return f.alpha, f.x_m
            if f.kind == "pareto_alpha2":
                return 2.0, f.x_m
            if f.kind == "exponential":
                return f.rate, 0.0
            return f.value, 0.0
        xa, xb = enc(self.xi)
        ea, eb = enc(self.eta) if self.dependence == "independent" else (0.0, 0.0)
        if self.xi.kind == "pareto_alpha2":
            xk = FAMILY_CODES["pareto"]
        if self.dependence == "independent" and self.eta.kind == "pareto":
            ek = FAMILY_CODES["pareto"]
        return (xk, xa, xb, ek, ea, eb, DEP_CODES[self.dependence], self.theta, self.c)


@dataclass(frozen=True)
class ConditionReport:
    regime: str               # RW_I | RW_II | finite_variance_baseline | inapplicable
    alpha: float
    gamma: float
    ell: SlowlyVarying | None
    pert_satisfied: bool
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "ell": None if self.ell is None else {"kind": self.ell.kind, "kappa": self.ell.kappa},
            "pert_satisfied": self.pert_satisfied,
            "notes": self.notes,
        }


def stable_index(xi: Family) -> float | None:
    """Stable index alpha for heavy-tailed step families, None for finite variance."""
    if xi.kind == "pareto" and xi.alpha < 2.0:
        return xi.alpha
    if xi.kind == "pareto_alpha2":
        return 2.0
    return None


def default_gamma(xi: Family) -> float:
    a = stable_index(xi)
    if a is None:
        return 2.0
    if a == 2.0:
        return 1.5
    return a - 0.05


def make_model(xi_params: dict, eta_params: dict, dependence="independent", gamma: float | None = None) -> ModelSpec:
    """Validate parameters and build an immutable ModelSpec with derived mean."""
    xi = Family.from_dict(xi_params)
    eta = Family.from_dict(eta_params)
    theta, c = 1.0, 1.0
    if isinstance(dependence, dict):
        theta = float(dependence.get("theta", 1.0))
        c = float(dependence.get("c", 1.0))
        dependence = dependence.get("kind", "comonotone")
    if gamma is None:
        gamma = default_gamma(xi)
    return ModelSpec(xi=xi, eta=eta, dependence=dependence, theta=theta, c=c, gamma=float(gamma))


def classify_conditions(model: ModelSpec) -> ConditionReport:
    """Decide which attraction regime the step law falls in and whether the
    perturbation's truncated mean grows slowly enough for the chosen gamma."""
    xi = model.xi
    g = model.gamma

    # truncated-mean growth of the eta marginal: bounded mean is O(1);
    # tail index p < 1 gives E(eta ^ t) = O(t^{1-p}), requiring gamma <= 1 + p.
    p = model.eta_tail_index()
    if p > 1.0:
        pert = g <= 2.0
    else:
        pert = (1.0 - p) <= (2.0 - g) + 1e-12

    if xi.kind == "pareto" and xi.alpha < 2.0:
        ell = SlowlyVarying("constant", xi.x_m ** xi.alpha)
        return ConditionReport("RW_II", xi.alpha, g, ell, pert,
                               notes="power tail with index in (1,2)")
    if xi.kind == "pareto_alpha2":
        ell = SlowlyVarying("log", 2.0 * xi.x_m ** 2)
        return ConditionReport("RW_I", 2.0, g, ell, pert,
                               notes="truncated second moment grows like 2*x_m^2*ln t")
    if math.isfinite(xi.variance):
        return ConditionReport("finite_variance_baseline", 2.0, g, None, pert,
                               notes="finite step variance; Gaussian baseline applies")
    return ConditionReport("inapplicable", math.nan, g, None, pert, notes="unclassified step law")

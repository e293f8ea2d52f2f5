"""Descent with an approximately aligned direction oracle on smooth potentials
satisfying a Polyak-Lojasiewicz inequality, with a per-step certificate of the
linear rate J_{k+1} <= (1 - rho) J_k."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InsufficientIterations, OracleViolation

ORACLE_TOL = 1e-9
CERT_TOL = 1e-12
RATE_FLOOR = 1e-14


@dataclass(frozen=True)
class SmoothPotential:
    name: str
    evaluate: Callable
    gradient: Callable
    L: float
    nu: float
    dim: int
    x0: tuple = ()
    box: float = 0.0  # half-width of the box the constants hold on, 0 for global

    def __post_init__(self):
        if not (self.L >= self.nu > 0):
            raise ValueError("need L >= nu > 0")


def quadratic(alpha: float = 2.0, dim: int = 2, x0=None) -> SmoothPotential:
    """J(x) = alpha/2 |x|^2, so L = nu = alpha."""
    x0 = tuple(x0) if x0 is not None else tuple(1.0 if i % 2 == 0 else -0.5 for i in range(dim))
    return SmoothPotential(
        "quadratic", lambda x: 0.5 * alpha * float(np.dot(x, x)), lambda x: alpha * np.asarray(x, float),
        alpha, alpha, dim, x0)


def anisotropic_quadratic(diag=(1.0, 4.0), x0=None) -> SmoothPotential:
    """J(x) = 1/2 sum a_i x_i^2: L = max a_i, nu = min a_i."""
    a = np.asarray(diag, float)
    x0 = tuple(x0) if x0 is not None else tuple(1.0 for _ in a)
    return SmoothPotential(
        "anisotropic", lambda x: 0.5 * float(np.dot(a * x, x)), lambda x: a * np.asarray(x, float),
        float(a.max()), float(a.min()), a.size, x0)


def _pl_f(x):
    return x * x + 3.0 * np.sin(x) ** 2


def _pl_df(x):
    return 2.0 * x + 3.0 * np.sin(2.0 * x)


def _pl_d2f(x):
    return 2.0 + 6.0 * np.cos(2.0 * x)


def measure_pl_constants(box: float = 3.0, n: int = 200001):
    """(L, nu) of x^2 + 3 sin^2 x on [-box, box] by dense sampling:
    L = max |f''|, nu = min f'^2 / (2 f) away from the minimizer."""
    x = np.linspace(-box, box, n)
    L = float(np.max(np.abs(_pl_d2f(x))))
    m = np.abs(x) > 1e-6
    ratio = _pl_df(x[m]) ** 2 / (2.0 * _pl_f(x[m]))
    return L, float(np.min(ratio))


def nonconvex_pl(dim: int = 2, box: float = 3.0, x0=None) -> SmoothPotential:
    """Separable sum of x^2 + 3 sin^2 x: nonconvex, PL on the box, minimum 0 at 0.
    f is increasing in |x|, so descent keeps iterates inside their sublevel set."""
    L, nu = measure_pl_constants(box)
    x0 = tuple(x0) if x0 is not None else tuple(2.5 if i % 2 == 0 else -1.5 for i in range(dim))
    return SmoothPotential(
        "nonconvex_pl", lambda x: float(np.sum(_pl_f(np.asarray(x, float)))),
        lambda x: _pl_df(np.asarray(x, float)), L, nu, dim, x0, box)


POTENTIALS = {
    "quadratic": quadratic,
    "anisotropic": anisotropic_quadratic,
    "nonconvex_pl": nonconvex_pl,
}


def potential(name: str) -> SmoothPotential:
    if name not in POTENTIALS:
        raise KeyError(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}")
    return POTENTIALS[name]()


@dataclass(frozen=True)
class AlignedOracle:
    """direction(x, g) with <d, g> >= c1 |g|^2 and |d| <= c2 |g|."""
    name: str
    direction: Callable
    c1: float
    c2: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")

    def verify(self, d, g):
        gg = float(np.dot(g, g))
        tol = ORACLE_TOL * max(1.0, gg)
        if float(np.dot(d, g)) < self.c1 * gg - tol:
            raise OracleViolation(f"{self.name}: descent inequality fails (<d,g>={np.dot(d, g):.3e}, "
                                  f"c1|g|^2={self.c1 * gg:.3e})")
        if float(np.linalg.norm(d)) > self.c2 * math.sqrt(gg) + tol:
            raise OracleViolation(f"{self.name}: magnitude bound fails")


def exact_gradient() -> AlignedOracle:
    return AlignedOracle("exact", lambda x, g: np.asarray(g, float), 1.0, 1.0)


def scaled_gradient(scales) -> AlignedOracle:
    """Diagonal preconditioning: c1 = min scale, c2 = max scale."""
    s = np.asarray(scales, float)
    if np.any(s <= 0):
        raise ValueError("scales must be positive")
    return AlignedOracle("scaled", lambda x, g: s * np.asarray(g, float), float(s.min()), float(s.max()))


def rotated_gradient(angle: float) -> AlignedOracle:
    """2-D gradient rotated by a fixed angle below pi/2: c1 = cos(angle), c2 = 1."""
    if not abs(angle) < math.pi / 2:
        raise ValueError("angle must be below pi/2")
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    return AlignedOracle("rotated", lambda x, g: R @ np.asarray(g, float), c, 1.0)


def rate(potential: SmoothPotential, oracle: AlignedOracle, eta: float) -> float:
    return 2.0 * potential.nu * (eta * oracle.c1 - potential.L * eta ** 2 * oracle.c2 ** 2 / 2.0)


def max_step(potential: SmoothPotential, oracle: AlignedOracle) -> float:
    """Admissible steps satisfy eta < 2 c1 / (L c2^2)."""
    return 2.0 * oracle.c1 / (potential.L * oracle.c2 ** 2)


@dataclass
class ConvergenceReport:
    potential: str
    oracle: str
    eta: float
    rho: float
    admissible: bool
    certified: bool
    J: list = field(default_factory=list)
    L: float = 0.0
    nu: float = 0.0
    c1: float = 0.0
    c2: float = 0.0

    def to_dict(self):
        return {"potential": self.potential, "oracle": self.oracle, "eta": self.eta, "rho": self.rho,
                "admissible": self.admissible, "certified": self.certified, "L": self.L, "nu": self.nu,
                "c1": self.c1, "c2": self.c2, "steps": len(self.J) - 1, "J": list(self.J)}

    def to_csv(self):
        return "k,J\n" + "".join(f"{k},{j!r}\n" for k, j in enumerate(self.J))


def run_descent(potential: SmoothPotential, oracle: AlignedOracle, x0=None, eta: float = None,
                K: int = 50) -> ConvergenceReport:
    """K steps of x <- x - eta d(x); certification is checked only for admissible eta."""
    if eta is None or not eta > 0:
        raise ValueError("eta must be > 0")
    if K < 1:
        raise ValueError("K must be >= 1")
    x = np.asarray(potential.x0 if x0 is None else x0, dtype=float).copy()
    if x.size != potential.dim:
        raise ValueError(f"x0 has dimension {x.size}, potential has {potential.dim}")
    rho = rate(potential, oracle, eta)
    admissible = eta < max_step(potential, oracle)
    J = [potential.evaluate(x)]
    for _ in range(K):
        g = potential.gradient(x)
        d = oracle.direction(x, g)
        oracle.verify(d, g)
        x = x - eta * d
        J.append(potential.evaluate(x))
        if not math.isfinite(J[-1]):
            break
    certified = admissible and all(b <= (1.0 - rho) * a + CERT_TOL for a, b in zip(J, J[1:]))
    return ConvergenceReport(potential.name, oracle.name, eta, rho, admissible, certified, J,
                             potential.L, potential.nu, oracle.c1, oracle.c2)


def estimate_rate(report: ConvergenceReport) -> float:
    """1 - exp(slope) of a least-squares fit to log J_k over the iterates above 1e-14."""
    ks = [k for k, j in enumerate(report.J) if j > RATE_FLOOR]
    if len(ks) < 5:
        raise InsufficientIterations(f"only {len(ks)} iterates above {RATE_FLOOR:g}; need 5")
    k = np.asarray(ks, float)
    y = np.log([report.J[i] for i in ks])
    slope = np.polyfit(k, y, 1)[0]
    return float(1.0 - math.exp(slope))

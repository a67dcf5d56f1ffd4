"""Carreau-Yasuda / power-law strain rate-shear stress laws.

Symmetric 2x2 tensors are handled either as full ``(..., 2, 2)`` arrays or
in Mandel coordinates ``(t_xx, t_yy, sqrt(2) t_xy)``, in which the Frobenius
product is the Euclidean dot product and the stress tangent is a symmetric
3x3 matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("carreau_yasuda", "power_law", "newtonian")

# floor on |tau| (and on |delta| in the stabilization) inside Newton tangents
EPS_TAN = 1e-10

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class FlowLaw:
    kind: str = "power_law"
    mu: float = 1.0
    delta: float = 0.0
    a: float = 2.0
    r: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown law kind {self.kind!r}; expected one of {KINDS}")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if not self.a > 0:
            raise ValueError(f"a must be > 0, got {self.a}")
        if not (self.r > 1 and math.isfinite(self.r)):
            raise ValueError(f"r must lie in (1, inf), got {self.r}")
        if self.kind == "power_law" and self.delta != 0:
            raise ValueError("power_law requires delta = 0")
        if self.kind == "newtonian" and self.r != 2:
            raise ValueError("newtonian requires r = 2")

    @classmethod
    def newtonian(cls, mu: float = 1.0) -> FlowLaw:
        return cls("newtonian", mu=mu, delta=0.0, a=2.0, r=2.0)

    @property
    def r_conj(self) -> float:
        return self.r / (self.r - 1.0)

    @property
    def r_hat(self) -> float:
        return min(self.r, 2.0)

    def with_r(self, r: float) -> FlowLaw:
        kind = self.kind
        if kind == "newtonian" and r != 2:
            kind = "power_law" if self.delta == 0 else "carreau_yasuda"
        return FlowLaw(kind, self.mu, self.delta, self.a, r)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "mu": self.mu, "delta": self.delta, "a": self.a, "r": self.r}


@dataclass(frozen=True)
class LawConstants:
    r_hat: float
    sigma_de: float
    sigma_hc: float
    sigma_sm: float


def law_constants(law: FlowLaw) -> LawConstants:
    """Power-framed constants of a Carreau-Yasuda law with constant mu and a."""
    r, mu, a = law.r, law.mu, law.a
    pos = max(0.0, 1.0 / a - 1.0 / r)
    neg = -min(0.0, 1.0 / a - 1.0 / r)
    if r < 2:
        hc = mu / (r - 1) * 2.0 ** ((-neg - 1) * (r - 2) + 1 / r)
    else:
        hc = mu * (r - 1) * 2.0 ** (pos * (r - 2))
    if r <= 2:
        sm = mu * (r - 1) * 2.0 ** (pos * (r - 2))
    else:
        sm = mu / (r - 1) * 2.0 ** ((-neg - 1) * (r - 2) - 1)
    return LawConstants(r_hat=law.r_hat, sigma_de=law.delta, sigma_hc=hc, sigma_sm=sm)


def modulus(law: FlowLaw, alpha):
    """Scalar viscosity ``mu (delta^a + alpha^a)^((r-2)/a)``; ``inf`` is possible at 0."""
    alpha = np.asarray(alpha, dtype=float)
    e = (law.r - 2.0) / law.a
    if law.delta == 0.0:
        with np.errstate(divide="ignore"):
            return law.mu * alpha ** (law.r - 2.0)
    return law.mu * (law.delta**law.a + alpha**law.a) ** e


def modulus_derivative(law: FlowLaw, alpha):
    alpha = np.asarray(alpha, dtype=float)
    if law.delta == 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            return law.mu * (law.r - 2.0) * alpha ** (law.r - 3.0)
    s = law.delta**law.a + alpha**law.a
    return law.mu * (law.r - 2.0) * s ** ((law.r - 2.0) / law.a - 1.0) * alpha ** (law.a - 1.0)


def stress(law: FlowLaw, tau: np.ndarray) -> np.ndarray:
    """sigma(tau) for symmetric tensors ``(..., 2, 2)``; sigma(0) = 0."""
    tau = np.asarray(tau, dtype=float)
    if law.r == 2.0:
        return law.mu * tau
    nrm = np.sqrt((tau * tau).sum(axis=(-2, -1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(nrm > 0, modulus(law, nrm), 0.0)
    return s[..., None, None] * tau


def to_mandel(tau: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    return np.stack([tau[..., 0, 0], tau[..., 1, 1], SQRT2 * tau[..., 0, 1]], axis=-1)


def from_mandel(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    off = t[..., 2] / SQRT2
    return np.stack([np.stack([t[..., 0], off], -1), np.stack([off, t[..., 1]], -1)], -2)


def stress_mandel(law: FlowLaw, t: np.ndarray) -> np.ndarray:
    if law.r == 2.0:
        return law.mu * t
    nrm = np.sqrt((t * t).sum(axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(nrm > 0, modulus(law, nrm), 0.0)
    return s[..., None] * t


def tangent_mandel(law: FlowLaw, t: np.ndarray, eps: float = EPS_TAN) -> np.ndarray:
    """d sigma / d tau as ``(..., 3, 3)`` symmetric matrices in Mandel coordinates."""
    t = np.asarray(t, dtype=float)
    eye = np.eye(3)
    if law.r == 2.0:
        return np.broadcast_to(law.mu * eye, t.shape[:-1] + (3, 3)).copy()
    nrm = np.maximum(np.sqrt((t * t).sum(axis=-1)), eps)
    s = modulus(law, nrm)
    ds = modulus_derivative(law, nrm) / nrm
    return s[..., None, None] * eye + ds[..., None, None] * t[..., :, None] * t[..., None, :]


def stress_tangent(law: FlowLaw, tau: np.ndarray, eps: float = EPS_TAN) -> np.ndarray:
    """Stress tangent of a single symmetric tensor as a symmetric 3x3 Mandel matrix."""
    return tangent_mandel(law, to_mandel(tau), eps)


@dataclass(frozen=True)
class PowerFramedReport:
    samples: int
    worst_holder_ratio: float
    worst_monotonicity_ratio: float

    @property
    def passed(self) -> bool:
        return self.worst_holder_ratio <= 1 + 1e-9 and self.worst_monotonicity_ratio <= 1 + 1e-9


def _random_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    t = rng.standard_normal((n, 3))
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def verify_power_framed(law: FlowLaw, sample_count: int = 10_000, seed: int = 0) -> PowerFramedReport:
    """Sample the Hoelder-continuity and strong-monotonicity inequalities.

    Magnitudes are log-uniform in [1e-3, 1e3]. Half of the pairs are
    independent; the other half are close pairs, which probe the small
    |tau - eta| regime where the Hoelder bound is tight.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    c = law_constants(law)
    r, rh = law.r, c.r_hat
    n = sample_count
    logs = rng.uniform(math.log(1e-3), math.log(1e3), (2, n))
    tau = _random_directions(rng, n) * np.exp(logs[0])[:, None]
    eta = _random_directions(rng, n) * np.exp(logs[1])[:, None]
    half = n // 2
    if half:
        nt = np.linalg.norm(tau[:half], axis=1, keepdims=True)
        eta[:half] = tau[:half] * (1 + rng.uniform(-1e-2, 1e-2, (half, 1)))
        eta[:half] += 1e-3 * nt * _random_directions(rng, half)

    diff_s = stress_mandel(law, tau) - stress_mandel(law, eta)
    diff = tau - eta
    nd = np.linalg.norm(diff, axis=1)
    keep = nd > 0
    base = c.sigma_de**r + np.linalg.norm(tau, axis=1) ** r + np.linalg.norm(eta, axis=1) ** r
    holder = np.linalg.norm(diff_s, axis=1) / (c.sigma_hc * base ** ((r - rh) / r) * nd ** (rh - 1))
    inner = (diff_s * diff).sum(axis=1)
    with np.errstate(divide="ignore"):
        mono = np.where(inner > 0, c.sigma_sm * nd ** (r + 2 - rh) / (inner * base ** ((2 - rh) / r)), np.inf)
    return PowerFramedReport(
        samples=n,
        worst_holder_ratio=float(holder[keep].max()),
        worst_monotonicity_ratio=float(mono[keep].max()),
    )


def scalar_modulus_bounds(law: FlowLaw, alpha: float) -> tuple[float, float]:
    """Lower/upper bounds on d(alpha * modulus(alpha))/d alpha."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    s = float(modulus(law, alpha))
    rh = law.r_hat
    return (rh - 1) * s, (law.r + 1 - rh) * s

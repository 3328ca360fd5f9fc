"""Parameters of the two-line diffusion-perturbed risk model with common shocks.

The surplus of the two lines evolves as

    dR = C dt + diag(sigma) dW - (claims of stream 1, 2 and 3),

where stream 1 hits line 1 only with claim sizes drawn from ``claim1``,
stream 2 hits line 2 only with sizes from ``claim2``, and stream 3 is a
common shock hitting both lines at once with independent sizes from
``claim1`` and ``claim2``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidParameters

EXPONENTIAL = "exponential"
UNIFORM = "uniform"

# integer codes used by the compiled simulation kernels
_KIND_CODES = {EXPONENTIAL: 0, UNIFORM: 1}


@dataclass(frozen=True)
class ClaimDist:
    """Claim-size law supported on (0, inf).

    ``kind`` is ``"exponential"`` (``param`` is the rate) or ``"uniform"``
    (uniform on ``(0, param)``).
    """

    kind: str
    param: float

    @classmethod
    def exponential(cls, rate: float) -> "ClaimDist":
        return cls(EXPONENTIAL, float(rate))

    @classmethod
    def uniform(cls, upper: float) -> "ClaimDist":
        return cls(UNIFORM, float(upper))

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    def problems(self, label: str = "claim") -> list[str]:
        if self.kind not in _KIND_CODES:
            return [f"{label} kind must be one of {sorted(_KIND_CODES)}, got {self.kind!r}"]
        if not (math.isfinite(self.param) and self.param > 0):
            name = "rate" if self.kind == EXPONENTIAL else "upper bound"
            return [f"{label} {name} must be > 0 and finite"]
        return []

    @property
    def mean(self) -> float:
        if self.kind == EXPONENTIAL:
            return 1.0 / self.param
        return 0.5 * self.param

    @property
    def variance(self) -> float:
        if self.kind == EXPONENTIAL:
            return 1.0 / self.param**2
        return self.param**2 / 12.0

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == EXPONENTIAL:
            out = self.param * np.exp(-self.param * np.where(z > 0, z, 0.0))
            return np.where(z > 0, out, 0.0)[()]
        return np.where((z > 0) & (z < self.param), 1.0 / self.param, 0.0)[()]

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        zp = np.maximum(z, 0.0)
        if self.kind == EXPONENTIAL:
            return -np.expm1(-self.param * zp)[()]
        return np.minimum(zp / self.param, 1.0)[()]

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == EXPONENTIAL:
            return (-np.log1p(-u) / self.param)[()]
        return (u * self.param)[()]

    def partial_moment(self, a, b):
        """Return the integral of ``w p(w)`` over ``w`` in ``[a, b]``."""
        lo = np.maximum(np.asarray(a, dtype=float), 0.0)
        hi = np.maximum(np.asarray(b, dtype=float), lo)
        if self.kind == EXPONENTIAL:
            th = self.param
            # the b -> inf limit of (b + 1/th) e^{-th b} is 0; guard inf * 0
            upper = np.where(np.isinf(hi), 0.0, (hi + 1.0 / th) * np.exp(-th * np.where(np.isinf(hi), 0.0, hi)))
            return ((lo + 1.0 / th) * np.exp(-th * lo) - upper)[()]
        lo = np.minimum(lo, self.param)
        hi = np.minimum(hi, self.param)
        return ((hi**2 - lo**2) / (2.0 * self.param))[()]

    def sample(self, rng: np.random.Generator, size=None):
        """Draw claim sizes by inverting the cdf of ``rng.random`` draws."""
        return self.quantile(rng.random(size))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "param": self.param}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ClaimDist":
        kind = d["kind"]
        if "param" in d:
            return cls(kind, float(d["param"]))
        key = "rate" if kind == EXPONENTIAL else "upper"
        return cls(kind, float(d[key]))


def claim_density(dist: ClaimDist, z) -> float:
    return dist.pdf(z)


def claim_sample(dist: ClaimDist, rng: np.random.Generator, size=None):
    return dist.sample(rng, size)


@dataclass(frozen=True)
class ModelParams:
    c1: float
    c2: float
    sigma1: float
    sigma2: float
    lambda1: float
    lambda2: float
    lambda3: float
    claim1: ClaimDist = field(default_factory=lambda: ClaimDist.exponential(1.0))
    claim2: ClaimDist = field(default_factory=lambda: ClaimDist.exponential(1.0))

    @property
    def c(self) -> np.ndarray:
        return np.array([self.c1, self.c2], dtype=float)

    @property
    def sigma(self) -> np.ndarray:
        return np.array([self.sigma1, self.sigma2], dtype=float)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3], dtype=float)

    @property
    def lambda_total(self) -> float:
        return self.lambda1 + self.lambda2 + self.lambda3

    @property
    def claims(self) -> tuple[ClaimDist, ClaimDist]:
        return (self.claim1, self.claim2)

    def claim_drain(self) -> np.ndarray:
        """Expected claim outflow per unit time on each line."""
        return np.array(
            [
                (self.lambda1 + self.lambda3) * self.claim1.mean,
                (self.lambda2 + self.lambda3) * self.claim2.mean,
            ]
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "c1": self.c1,
            "c2": self.c2,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda3": self.lambda3,
            "claim1": self.claim1.to_dict(),
            "claim2": self.claim2.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelParams":
        kw = {k: float(d[k]) for k in ("c1", "c2", "sigma1", "sigma2", "lambda1", "lambda2", "lambda3")}
        kw["claim1"] = ClaimDist.from_dict(d.get("claim1", {"kind": EXPONENTIAL, "param": 1.0}))
        kw["claim2"] = ClaimDist.from_dict(d.get("claim2", {"kind": EXPONENTIAL, "param": 1.0}))
        return cls(**kw)

    def params_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(params: ModelParams) -> ValidationReport:
    """Check every parameter invariant and collect the violations."""
    bad = []
    for name in ("c1", "c2"):
        v = getattr(params, name)
        if not (math.isfinite(v) and v >= 0):
            bad.append(f"{name} must be ≥ 0 and finite")
    for name in ("sigma1", "sigma2"):
        v = getattr(params, name)
        if not (math.isfinite(v) and v > 0):
            bad.append(f"{name} must be > 0")
    for name in ("lambda1", "lambda2", "lambda3"):
        v = getattr(params, name)
        if not (math.isfinite(v) and v >= 0):
            bad.append(f"{name} must be ≥ 0")
    bad += params.claim1.problems("claim1")
    bad += params.claim2.problems("claim2")
    return ValidationReport(tuple(bad))


def require_valid(params: ModelParams) -> ModelParams:
    report = validate(params)
    if not report.ok:
        raise InvalidParameters(report.violations)
    return params

"""Residuals of the backward integro-differential equation for candidate survival fields.

For the two-line model a finite-horizon survival function solves

    d/dt Phi + sum C_i d/dx_i Phi + 1/2 sum sigma_i^2 d^2/dx_i^2 Phi - lambda Phi
      + lambda1 E Phi(x - (Z1, 0)) + lambda2 E Phi(x - (0, Z2)) + lambda3 E Phi(x - (Z1, Z2)) = 0

with Phi = 0 on the axes and outside the quadrant.  The functions here
evaluate the left-hand side on a discretised field; they are test
instruments, not a solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import ModelParams

UNCOMPENSATED = "uncompensated"
COMPENSATED = "compensated"


@dataclass(frozen=True)
class Field:
    """Survival values on a tensor grid, indexed ``values[t, x1, x2]``."""

    t_nodes: np.ndarray
    x1_nodes: np.ndarray
    x2_nodes: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (len(self.t_nodes), len(self.x1_nodes), len(self.x2_nodes))
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} does not match nodes {shape}")
        for name in ("t_nodes", "x1_nodes", "x2_nodes"):
            nodes = getattr(self, name)
            if np.any(np.diff(nodes) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        if self.x1_nodes[0] != 0 or self.x2_nodes[0] != 0:
            raise ValueError("spatial nodes must start at 0")

    @classmethod
    def from_function(cls, fn, t_nodes, x1_nodes, x2_nodes, metadata=None) -> "Field":
        t, a, b = np.meshgrid(t_nodes, x1_nodes, x2_nodes, indexing="ij")
        vals = np.broadcast_to(np.asarray(fn(t, a, b), dtype=float), t.shape).copy()
        return cls(np.asarray(t_nodes, float), np.asarray(x1_nodes, float), np.asarray(x2_nodes, float), vals,
                   dict(metadata or {}))

    @classmethod
    def stationary(cls, fn, x1_nodes, x2_nodes, metadata=None) -> "Field":
        """Single-time field for ultimate (time-independent) candidates."""
        return cls.from_function(lambda t, a, b: fn(a, b), np.array([0.0]), x1_nodes, x2_nodes, metadata)

    def problems(self, tol: float = 0.0, terminal: bool = False) -> list[str]:
        out = []
        v = self.values
        if v.min() < -tol or v.max() > 1 + tol:
            out.append(f"values outside [0, 1] (min {v.min():.3g}, max {v.max():.3g})")
        if np.any(v[:, 0, :] != 0) or np.any(v[:, :, 0] != 0):
            out.append("boundary slices must vanish")
        if terminal and np.any(np.abs(v[-1, 1:, 1:] - 1.0) > tol):
            out.append("terminal slice must equal 1 on the open quadrant")
        return out


def _node_index(nodes, v, name):
    i = int(np.argmin(np.abs(nodes - v)))
    if abs(nodes[i] - v) > 1e-9 * max(1.0, abs(v)):
        raise DomainError(f"{name}={v} is not a grid node")
    return i


def _interior(nodes, v, name):
    i = _node_index(nodes, v, name)
    if i < 2 or i > len(nodes) - 3:
        raise DomainError(f"{name}={v} is within two nodes of a face")
    return i


def _stencil(nodes, i):
    """Three-point weights for the first and second derivative at node ``i``."""
    hl = nodes[i] - nodes[i - 1]
    hr = nodes[i + 1] - nodes[i]
    d1 = np.array([-hr / (hl * (hl + hr)), (hr - hl) / (hl * hr), hl / (hr * (hl + hr))])
    d2 = 2.0 * np.array([1.0 / (hl * (hl + hr)), -1.0 / (hl * hr), 1.0 / (hr * (hl + hr))])
    return d1, d2


def _spatial_derivatives(fld: Field, it, i1, i2):
    v = fld.values[it]
    d1a, d2a = _stencil(fld.x1_nodes, i1)
    d1b, d2b = _stencil(fld.x2_nodes, i2)
    col = v[i1 - 1:i1 + 2, i2]
    row = v[i1, i2 - 1:i2 + 2]
    return d1a @ col, d1b @ row, d2a @ col, d2b @ row


def _locate(fld: Field, point, stationary):
    if stationary:
        x1, x2 = point
        it = 0
    else:
        t, x1, x2 = point
        it = _interior(fld.t_nodes, t, "t")
    i1 = _interior(fld.x1_nodes, x1, "x1")
    i2 = _interior(fld.x2_nodes, x2, "x2")
    return it, i1, i2


def apply_L(fld: Field, params: ModelParams, point) -> float:
    """Local part ``(d/dt + C.grad + 1/2 sigma^2 Laplacian - lambda) Phi`` at a grid node."""
    it, i1, i2 = _locate(fld, point, stationary=False)
    g1, g2, h1, h2 = _spatial_derivatives(fld, it, i1, i2)
    d1t, _ = _stencil(fld.t_nodes, it)
    dphi_dt = d1t @ fld.values[it - 1:it + 2, i1, i2]
    return float(
        dphi_dt
        + params.c1 * g1
        + params.c2 * g2
        + 0.5 * params.sigma1**2 * h1
        + 0.5 * params.sigma2**2 * h2
        - params.lambda_total * fld.values[it, i1, i2]
    )


def _bilinear(v, n1, n2, y1, y2):
    """Bilinear interpolation of ``v[n1, n2]`` with zero extension off the quadrant."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    inside = (y1 > 0) & (y2 > 0) & (y1 <= n1[-1]) & (y2 <= n2[-1])
    a = np.clip(np.searchsorted(n1, y1, side="right") - 1, 0, len(n1) - 2)
    b = np.clip(np.searchsorted(n2, y2, side="right") - 1, 0, len(n2) - 2)
    s = np.clip((y1 - n1[a]) / (n1[a + 1] - n1[a]), 0.0, 1.0)
    r = np.clip((y2 - n2[b]) / (n2[b + 1] - n2[b]), 0.0, 1.0)
    out = (
        (1 - s) * (1 - r) * v[a, b]
        + s * (1 - r) * v[a + 1, b]
        + (1 - s) * r * v[a, b + 1]
        + s * r * v[a + 1, b + 1]
    )
    return np.where(inside, out, 0.0)


def _gl01(n):
    z, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (z + 1.0), 0.5 * w


def claim_integrals(fld: Field, params: ModelParams, it: int, x1: float, x2: float, quad_nodes: int = 64):
    """``(E Phi(x-(Z1,0)), E Phi(x-(0,Z2)), E Phi(x-(Z1,Z2)))`` on time slice ``it``.

    Claims larger than the reserve send the state off the quadrant where the
    field is zero, so each expectation only runs over ``Z_i < x_i``; the
    quantile substitution ``Z_i = Q_i(F_i(x_i) u)`` maps that range to ``u`` in (0, 1).
    """
    u, w = _gl01(quad_nodes)
    v = fld.values[it]
    n1, n2 = fld.x1_nodes, fld.x2_nodes
    f1 = float(params.claim1.cdf(x1))
    f2 = float(params.claim2.cdf(x2))
    z1 = params.claim1.quantile(f1 * u)
    z2 = params.claim2.quantile(f2 * u)
    i1 = f1 * float(w @ _bilinear(v, n1, n2, x1 - z1, np.full_like(z1, x2)))
    i2 = f2 * float(w @ _bilinear(v, n1, n2, np.full_like(z2, x1), x2 - z2))
    g1, g2 = np.meshgrid(x1 - z1, x2 - z2, indexing="ij")
    i3 = f1 * f2 * float(w @ _bilinear(v, n1, n2, g1, g2) @ w)
    return i1, i2, i3


def pide_residual(fld: Field, params: ModelParams, point, quad_nodes: int = 64) -> float:
    """Full residual of the finite-horizon equation at a grid node ``(t, x1, x2)``."""
    it, i1, i2 = _locate(fld, point, stationary=False)
    x1, x2 = fld.x1_nodes[i1], fld.x2_nodes[i2]
    local = apply_L(fld, params, point)
    j1, j2, j3 = claim_integrals(fld, params, it, x1, x2, quad_nodes)
    return local + params.lambda1 * j1 + params.lambda2 * j2 + params.lambda3 * j3


def ultimate_residual(fld: Field, params: ModelParams, point, convention: str = UNCOMPENSATED,
                      quad_nodes: int = 64) -> float:
    """Stationary generator applied to a time-independent candidate at ``(x1, x2)``.

    ``convention="uncompensated"`` uses the premium drift with explicit
    ``-lambda Phi`` and shifted-claim expectations.  ``"compensated"`` uses the
    drift reduced by the mean claim outflow and a compensated jump integrand
    ``Phi(x - z) - Phi(x) + z . grad Phi``; for this model both describe the
    same operator and differ only by rounding.
    """
    if len(fld.t_nodes) != 1:
        raise DomainError("ultimate_residual expects a single-time field")
    _, i1, i2 = _locate(fld, point, stationary=True)
    x1, x2 = fld.x1_nodes[i1], fld.x2_nodes[i2]
    g1, g2, h1, h2 = _spatial_derivatives(fld, 0, i1, i2)
    phi = fld.values[0, i1, i2]
    j1, j2, j3 = claim_integrals(fld, params, 0, x1, x2, quad_nodes)
    diffusion = 0.5 * params.sigma1**2 * h1 + 0.5 * params.sigma2**2 * h2
    lam1, lam2, lam3 = params.lambdas
    if convention == UNCOMPENSATED:
        drift = params.c1 * g1 + params.c2 * g2
        jumps = lam1 * j1 + lam2 * j2 + lam3 * j3 - params.lambda_total * phi
    elif convention == COMPENSATED:
        m1, m2 = params.claim1.mean, params.claim2.mean
        c_comp1 = params.c1 - (lam1 + lam3) * m1
        c_comp2 = params.c2 - (lam2 + lam3) * m2
        drift = c_comp1 * g1 + c_comp2 * g2
        jumps = (
            lam1 * (j1 - phi + m1 * g1)
            + lam2 * (j2 - phi + m2 * g2)
            + lam3 * (j3 - phi + m1 * g1 + m2 * g2)
        )
    else:
        raise ValueError(f"unknown drift convention {convention!r}")
    return float(drift + diffusion + jumps)


def residual_sweep(fld: Field, params: ModelParams, points, quad_nodes: int = 64):
    """Rows ``(t, x1, x2, residual, h1, h2, dt)`` for CSV output."""
    rows = []
    for t, x1, x2 in points:
        r = pide_residual(fld, params, (t, x1, x2), quad_nodes)
        i1 = _node_index(fld.x1_nodes, x1, "x1")
        i2 = _node_index(fld.x2_nodes, x2, "x2")
        it = _node_index(fld.t_nodes, t, "t")
        rows.append((t, x1, x2, r,
                     fld.x1_nodes[i1 + 1] - fld.x1_nodes[i1],
                     fld.x2_nodes[i2 + 1] - fld.x2_nodes[i2],
                     fld.t_nodes[it + 1] - fld.t_nodes[it]))
    return rows

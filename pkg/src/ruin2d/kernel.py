"""Killed-diffusion kernel of the claim-free problem and the integral-equation kernels.

``K(t, x; tau, xi)`` is the density of the diffusion started at ``xi`` at time
``tau`` being at ``x`` at time ``t`` without touching either axis, discounted
by ``exp(-lambda (t - tau))``.  In tilted form

    K = exp(beta (t-tau) + <alpha, x-xi>)
        * prod_i (2 pi sigma_i^2 (t-tau))^(-1/2)
          [exp(-(x_i-xi_i)^2 / (2 sigma_i^2 (t-tau))) - exp(-(x_i+xi_i)^2 / (2 sigma_i^2 (t-tau)))]

with ``alpha_i = C_i / sigma_i^2`` and ``beta = -(lambda + sum C_i^2 / (2 sigma_i^2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr

from .errors import DomainError
from .model import ModelParams, require_valid


@dataclass(frozen=True)
class KernelConstants:
    alpha: tuple[float, float]
    beta: float
    lambda_total: float

    def shifted(self, dbeta: float) -> "KernelConstants":
        return replace(self, beta=self.beta + dbeta)


def kernel_constants(params: ModelParams) -> KernelConstants:
    require_valid(params)
    c, s = params.c, params.sigma
    alpha = c / s**2
    lam = params.lambda_total
    beta = -(lam + float(np.sum(c**2 / (2.0 * s**2))))
    return KernelConstants((float(alpha[0]), float(alpha[1])), beta, lam)


def _pair(v, name):
    a = np.asarray(v, dtype=float)
    if a.shape[-1:] != (2,):
        raise DomainError(f"{name} must have a trailing axis of length 2")
    return a[..., 0], a[..., 1]


def _image_factor(x, xi, a, var):
    """``exp(a (x-xi)) [phi(x-xi) - phi(x+xi)]`` for variance ``var``, without cancellation."""
    d = x - xi
    expo = a * d - d * d / (2.0 * var)
    return np.exp(expo) * -np.expm1(-2.0 * x * xi / var) / np.sqrt(2.0 * math.pi * var)


def eval_K(t, x, tau, xi, k: KernelConstants, params: ModelParams):
    """Kernel value; ``x`` and ``xi`` broadcast over leading axes."""
    dt = np.asarray(t, dtype=float) - np.asarray(tau, dtype=float)
    if np.any(dt <= 0):
        raise DomainError("eval_K needs t > tau")
    x1, x2 = _pair(x, "x")
    y1, y2 = _pair(xi, "xi")
    if np.any(x1 < 0) or np.any(x2 < 0) or np.any(y1 < 0) or np.any(y2 < 0):
        raise DomainError("x and xi must lie in the closed positive quadrant")
    v1 = params.sigma1**2 * dt
    v2 = params.sigma2**2 * dt
    a1, a2 = k.alpha
    d1, d2 = x1 - y1, x2 - y2
    expo = k.beta * dt + a1 * d1 + a2 * d2 - d1 * d1 / (2.0 * v1) - d2 * d2 / (2.0 * v2)
    img = np.expm1(-2.0 * x1 * y1 / v1) * np.expm1(-2.0 * x2 * y2 / v2)
    return (np.exp(expo) * img / (2.0 * math.pi * np.sqrt(v1 * v2)))[()]


def adjoint_terms(t, x, tau, xi, k: KernelConstants, params: ModelParams, h: float = 1e-3):
    """Finite-difference terms of ``L* K`` at ``(t, x)``.

    Returns ``(residual, scale)`` where ``scale`` is the largest magnitude among
    ``K`` and the individual operator terms.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if t - tau < 10 * h:
        raise DomainError("residual needs t - tau >= 10 h")
    if np.any(x < 3 * h):
        raise DomainError("residual needs x_i >= 3 h")

    def K(tt, xx):
        return float(eval_K(tt, xx, tau, xi, k, params))

    k0 = K(t, x)
    dt_term = -(K(t + h, x) - K(t - h, x)) / (2 * h)
    terms = [dt_term, -params.lambda_total * k0]
    for i, (c, s) in enumerate(zip(params.c, params.sigma)):
        e = np.zeros(2)
        e[i] = h
        kp, km = K(t, x + e), K(t, x - e)
        terms.append(-c * (kp - km) / (2 * h))
        terms.append(0.5 * s * s * (kp - 2 * k0 + km) / (h * h))
    residual = float(sum(terms))
    scale = max(abs(k0), max(abs(v) for v in terms))
    return residual, scale


def residual_adjoint(t, x, tau, xi, k: KernelConstants, params: ModelParams, h: float = 1e-3, relative=False):
    """Central-difference value of ``L* K`` with
    ``L* = -d/dt - sum C_i d/dx_i + 1/2 sum sigma_i^2 d^2/dx_i^2 - lambda``.
    """
    res, scale = adjoint_terms(t, x, tau, xi, k, params, h)
    if relative:
        return abs(res) / scale if scale > 0 else 0.0
    return res


def _tilted_mass(a, lo, hi, s):
    """Integral of ``exp(a v) phi_s(v)`` over ``[lo, hi]`` as ``(log prefactor, mass)``."""
    m = a * s * s
    zl = (lo - m) / s
    zh = (hi - m) / s
    # difference of normal cdfs taken on the side that avoids cancellation
    mass = np.where(zl > 0, ndtr(-zl) - ndtr(-zh), ndtr(zh) - ndtr(zl))
    return 0.5 * a * a * s * s, mass


def _axis_integral(xi, a, var, upper=np.inf):
    """Integral over ``x`` in ``[0, upper]`` of ``exp(a (x-xi)) [phi(x-xi) - phi(x+xi)]``."""
    s = np.sqrt(var)
    xi = np.asarray(xi, dtype=float)
    if np.isinf(upper):
        m = a * var
        direct = ndtr((xi + m) / s)
        image = np.exp(-2.0 * a * xi + log_ndtr((m - xi) / s))
        return 0.5 * a * a * var, direct - image
    lp, direct = _tilted_mass(a, -xi, upper - xi, s)
    _, image = _tilted_mass(a, xi, upper + xi, s)
    return lp, direct - np.exp(-2.0 * a * xi) * image


def eval_F(tau, xi, T, k: KernelConstants, params: ModelParams, method: str = "closed"):
    """``F(tau, xi)``: integral of ``K(T, x; tau, xi)`` over the positive quadrant.

    Separable, so each axis reduces to shifted Gaussian masses.  ``method="quad"``
    integrates the kernel numerically instead (slow, for cross-checking).
    """
    dt = float(T) - float(tau)
    if dt <= 0:
        raise DomainError("eval_F needs T > tau")
    y1, y2 = _pair(xi, "xi")
    if np.any(y1 < 0) or np.any(y2 < 0):
        raise DomainError("xi must lie in the closed positive quadrant")
    if method == "quad":
        return _F_quadrature(tau, (float(y1), float(y2)), T, k, params)
    lp1, m1 = _axis_integral(y1, k.alpha[0], params.sigma1**2 * dt)
    lp2, m2 = _axis_integral(y2, k.alpha[1], params.sigma2**2 * dt)
    out = np.exp(k.beta * dt + lp1 + lp2) * m1 * m2
    return np.where((y1 <= 0) | (y2 <= 0), 0.0, out)[()]


def eval_F_truncated(tau, xi, T, x_max, k: KernelConstants, params: ModelParams):
    """As :func:`eval_F` with the spatial integral cut at ``x_max`` on each axis."""
    dt = float(T) - float(tau)
    if dt <= 0:
        raise DomainError("eval_F needs T > tau")
    y1, y2 = _pair(xi, "xi")
    lp1, m1 = _axis_integral(y1, k.alpha[0], params.sigma1**2 * dt, x_max[0])
    lp2, m2 = _axis_integral(y2, k.alpha[1], params.sigma2**2 * dt, x_max[1])
    out = np.exp(k.beta * dt + lp1 + lp2) * m1 * m2
    return np.where((y1 <= 0) | (y2 <= 0), 0.0, out)[()]


def _F_quadrature(tau, xi, T, k, params):
    dt = T - tau
    hi = []
    for i in range(2):
        s = params.sigma[i] * math.sqrt(dt)
        hi.append(xi[i] + abs(params.c[i]) * dt + 14.0 * s)
    val, _ = integrate.dblquad(
        lambda x2, x1: float(eval_K(T, (x1, x2), tau, xi, k, params)),
        0.0, hi[0], 0.0, hi[1],
        epsabs=1e-12, epsrel=1e-11,
    )
    return val


def _gl01(n):
    z, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (z + 1.0), 0.5 * w


def _claim_rule(dist, x, center, spread, u, w, m=12.0):
    """Nodes and weights for ``int_0^inf f(x + z) p(z) dz`` when ``f`` lives on ``center +- m spread``.

    Gauss-Legendre on the claim sizes that land the state inside that window
    (and inside the claim support), weighted by the claim density.
    """
    lo = max(0.0, center - m * spread - x)
    hi = center + m * spread - x
    if dist.kind == "uniform":
        hi = min(hi, dist.param)
    if hi <= lo:
        return np.empty(0), np.empty(0)
    z = lo + (hi - lo) * u
    return z, (hi - lo) * w * dist.pdf(z)


def eval_G(t, x, tau, xi, k: KernelConstants, params: ModelParams, n_nodes: int = 64):
    """Claim-convolution kernel of the integral equation.

    ``G(t, x; tau, xi) = sum over streams of lambda_j E[K(t, x + claim_j; tau, xi)]``,
    i.e. the density of reaching the pre-claim state ``x + claim`` weighted by the
    claim law.  As a function of ``x + claim`` the kernel is a Gaussian bump around
    ``xi + C (t - tau)``, so each expectation is a Gauss-Legendre rule over the
    claim sizes reaching that bump (tensor rule for the common stream).
    """
    dt = float(t) - float(tau)
    if dt <= 0:
        raise DomainError("eval_G needs t > tau")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    u, w = _gl01(n_nodes)
    rules = []
    for i in range(2):
        center = xi[i] + params.c[i] * dt
        spread = params.sigma[i] * math.sqrt(dt)
        rules.append(_claim_rule(params.claims[i], x[i], center, spread, u, w))
    (z1, w1), (z2, w2) = rules
    total = 0.0
    if params.lambda1 > 0 and z1.size:
        pts = np.stack([x[0] + z1, np.full_like(z1, x[1])], axis=-1)
        total += params.lambda1 * float(w1 @ eval_K(t, pts, tau, xi, k, params))
    if params.lambda2 > 0 and z2.size:
        pts = np.stack([np.full_like(z2, x[0]), x[1] + z2], axis=-1)
        total += params.lambda2 * float(w2 @ eval_K(t, pts, tau, xi, k, params))
    if params.lambda3 > 0 and z1.size and z2.size:
        g1, g2 = np.meshgrid(x[0] + z1, x[1] + z2, indexing="ij")
        vals = eval_K(t, np.stack([g1, g2], axis=-1), tau, xi, k, params)
        total += params.lambda3 * float(w1 @ vals @ w2)
    return total


def kernel_check(params: ModelParams, n_points: int = 100, seed: int = 0, h: float = 1e-3, tol: float = 1e-4):
    """Randomised residual and invariant checks.

    Returns rows ``(check_name, t, x1, x2, tau, xi1, xi2, value, bound, pass)``.
    """
    k = kernel_constants(params)
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_points):
        tau = rng.uniform(0.0, 1.0)
        dt = rng.uniform(0.2, 2.0)
        xi = rng.uniform(0.2, 3.0, size=2)
        spread = params.sigma * math.sqrt(dt)
        x = np.maximum(xi + params.c * dt + spread * rng.uniform(-2.0, 2.0, size=2), 0.05)
        rel = residual_adjoint(tau + dt, x, tau, xi, k, params, h, relative=True)
        rows.append(("adjoint_residual", tau + dt, x[0], x[1], tau, xi[0], xi[1], rel, tol, rel <= tol))
    for _ in range(max(1, n_points // 10)):
        tau = rng.uniform(0.0, 1.0)
        dt = rng.uniform(0.01, 2.0)
        xi = rng.uniform(0.0, 3.0, size=2)
        a = rng.uniform(0.0, 3.0)
        v = abs(float(eval_K(tau + dt, (0.0, a), tau, xi, k, params))) + abs(
            float(eval_K(tau + dt, (a, 0.0), tau, xi, k, params))
        )
        rows.append(("boundary_annihilation", tau + dt, 0.0, a, tau, xi[0], xi[1], v, 1e-14, v < 1e-14))
    return rows

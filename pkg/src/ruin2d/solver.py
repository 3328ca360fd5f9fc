"""Finite-horizon minimum survival probability from the second-kind integral equation.

The survival field satisfies

    Phi(tau, xi) = F(tau, xi) + int_tau^T int_{R+^2} G(t, x; tau, xi) Phi(t, x) dx dt,

and is computed by successive substitution starting from ``Phi = F``.  By
Fubini the inner integral equals ``int K(t, y; tau, xi) J[Phi](t, y) dy`` where
``J[Phi](t, y) = sum_j lambda_j E Phi(t, y - claim_j)``.  With ``Phi``
represented by its bilinear interpolant both ``J`` and the ``K``-integral
reduce to exact integrals of Gaussians and claim densities against hat
functions, and the kernel's product structure turns each into a pair of small
matrix products per time pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, DomainError
from .generator import Field
from .kernel import eval_F, eval_F_truncated, kernel_constants
from .model import ClaimDist, ModelParams, require_valid

DEFAULT_TOL = 1e-6
DEFAULT_KMAX = 50
DEFAULT_TAIL_TOL = 1e-8


@dataclass(frozen=True)
class SolverGrid:
    """Discretisation of ``[tau, T] x [0, x_max1] x [0, x_max2]``.

    ``xi_max`` bounds the trusted region: nodes up to it must lose less than
    ``tail_tol`` of kernel mass to the spatial truncation.  Nodes beyond it are
    still computed but feel the truncation.
    """

    tau: float
    T: float
    n_t: int
    x_max: tuple[float, float]
    n_x: tuple[int, int]
    quad_nodes: int = 64
    xi_max: tuple[float, float] | None = None
    tail_tol: float = DEFAULT_TAIL_TOL
    stretch: float = 3.0

    @classmethod
    def auto(cls, params: ModelParams, tau, T, xi_max, n_t, n_x, m: float = 8.0, **kw) -> "SolverGrid":
        """Choose ``x_max`` wide enough that the kernel tail past it is negligible.

        ``x_max_i = xi_max_i + C_i (T - tau) + m sigma_i sqrt(T - tau) + claim_mean_i lambda (T - tau)``.
        """
        dt = T - tau
        if np.isscalar(n_x):
            n_x = (int(n_x), int(n_x))
        if np.isscalar(xi_max):
            xi_max = (float(xi_max), float(xi_max))
        x_max = tuple(
            float(xi_max[i] + params.c[i] * dt + m * params.sigma[i] * math.sqrt(dt)
                  + params.claims[i].mean * params.lambda_total * dt)
            for i in range(2)
        )
        return cls(float(tau), float(T), int(n_t), x_max, tuple(n_x), xi_max=tuple(xi_max), **kw)

    def problems(self) -> list[str]:
        out = []
        if not self.tau < self.T:
            out.append("tau < T required")
        if self.n_t < 2:
            out.append("n_t must be >= 2")
        if min(self.n_x) < 3:
            out.append("n_x must be >= 3 per axis")
        if min(self.x_max) <= 0:
            out.append("x_max must be > 0")
        if self.stretch < 0:
            out.append("stretch must be >= 0")
        if self.xi_max is not None and any(a > b for a, b in zip(self.xi_max, self.x_max)):
            out.append("xi_max must not exceed x_max")
        return out

    @property
    def t_nodes(self) -> np.ndarray:
        return np.linspace(self.tau, self.T, self.n_t)

    def x_nodes(self, axis: int) -> np.ndarray:
        """Spatial nodes ``x_max (e^{k s} - 1) / (e^k - 1)`` for uniform ``s``; ``k = stretch``.

        A positive stretch clusters nodes near the absorbing axis where the
        survival function bends hardest.
        """
        s = np.linspace(0.0, 1.0, self.n_x[axis])
        if self.stretch == 0:
            return s * self.x_max[axis]
        x = self.x_max[axis] * np.expm1(self.stretch * s) / math.expm1(self.stretch)
        x[-1] = self.x_max[axis]
        return x

    def refined(self) -> "SolverGrid":
        """Halve every step, keeping the old nodes."""
        return SolverGrid(self.tau, self.T, 2 * self.n_t - 1, self.x_max,
                          (2 * self.n_x[0] - 1, 2 * self.n_x[1] - 1), self.quad_nodes, self.xi_max, self.tail_tol,
                          self.stretch)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "T": self.T, "n_t": self.n_t, "x_max": list(self.x_max), "n_x": list(self.n_x),
            "quad_nodes": self.quad_nodes, "xi_max": None if self.xi_max is None else list(self.xi_max),
            "tail_tol": self.tail_tol, "stretch": self.stretch,
        }

    @classmethod
    def from_dict(cls, d: dict, params: ModelParams | None = None) -> "SolverGrid":
        if "x_max" not in d:
            if params is None:
                raise ConfigError("grid needs x_max or model parameters to derive it")
            extra = {k: d[k] for k in ("quad_nodes", "tail_tol", "stretch") if k in d}
            return cls.auto(params, d.get("tau", 0.0), d["T"], d["xi_max"], d["n_t"], d["n_x"],
                            m=d.get("m", 8.0), **extra)
        n_x = d["n_x"] if isinstance(d["n_x"], (list, tuple)) else (d["n_x"], d["n_x"])
        x_max = d["x_max"] if isinstance(d["x_max"], (list, tuple)) else (d["x_max"], d["x_max"])
        xi = d.get("xi_max")
        if xi is not None and not isinstance(xi, (list, tuple)):
            xi = (xi, xi)
        return cls(float(d.get("tau", 0.0)), float(d["T"]), int(d["n_t"]), tuple(map(float, x_max)),
                   tuple(map(int, n_x)), int(d.get("quad_nodes", 64)),
                   None if xi is None else tuple(map(float, xi)), float(d.get("tail_tol", DEFAULT_TAIL_TOL)),
                   float(d.get("stretch", 3.0)))


@dataclass
class ConvergenceReport:
    iterations: int
    increments: list[float]
    converged: bool
    contraction_ratio: float
    value_range: tuple[float, float] = (math.nan, math.nan)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "increments": list(self.increments),
            "converged": self.converged,
            "contraction_ratio": self.contraction_ratio,
            "value_range": list(self.value_range),
        }


def _check_grid(grid: SolverGrid):
    bad = grid.problems()
    if bad:
        raise ConfigError("; ".join(bad))


def assemble_F(grid: SolverGrid, params: ModelParams) -> Field:
    """Claim-free discounted survival ``F`` on every grid node.

    The terminal slice is the limit ``tau -> T``: 1 on the open quadrant and 0
    on the axes.  Raises :class:`ConfigError` when the truncation loses more
    than ``grid.tail_tol`` of kernel mass at a trusted node.
    """
    require_valid(params)
    _check_grid(grid)
    k = kernel_constants(params)
    t = grid.t_nodes
    x1, x2 = grid.x_nodes(0), grid.x_nodes(1)
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    xi = np.stack([g1, g2], axis=-1)
    vals = np.empty((len(t), len(x1), len(x2)))
    xi_max = grid.xi_max or grid.x_max
    trusted = (g1 <= xi_max[0] + 1e-12) & (g2 <= xi_max[1] + 1e-12)
    for i, ti in enumerate(t[:-1]):
        vals[i] = eval_F(ti, xi, grid.T, k, params)
        lost = vals[i] - eval_F_truncated(ti, xi, grid.T, grid.x_max, k, params)
        worst = float(np.max(np.abs(lost[trusted])))
        if worst >= grid.tail_tol:
            raise ConfigError(
                f"spatial truncation x_max={grid.x_max} loses {worst:.3g} of kernel mass at t={ti:.4g} "
                f"(tail_tol={grid.tail_tol:.3g}); enlarge x_max or shrink xi_max"
            )
    vals[-1] = 1.0
    vals[-1, 0, :] = 0.0
    vals[-1, :, 0] = 0.0
    meta = {"params_hash": params.params_hash(), "horizon": grid.T, "kind": "F"}
    return Field(t, x1, x2, vals, meta)


def _ndtr_diff(lo, hi):
    """``N(hi) - N(lo)`` evaluated on the tail side that avoids cancellation."""
    return np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def _gauss_hat_weights(nodes, mean, sd):
    """``W[a, j] = int_0^{x_max} phi_sd(y - mean_a) hat_j(y) dy`` for piecewise-linear hats."""
    lo = nodes[:-1][None, :]
    hi = nodes[1:][None, :]
    h = hi - lo
    m = mean[:, None]
    zl = (lo - m) / sd
    zh = (hi - m) / sd
    m0 = _ndtr_diff(zl, zh)
    dens_l = np.exp(-0.5 * zl**2) / math.sqrt(2 * math.pi)
    dens_h = np.exp(-0.5 * zh**2) / math.sqrt(2 * math.pi)
    # integral of (y - lo)/h against the Gaussian on each cell
    m1 = ((m - lo) * m0 + sd * (dens_l - dens_h)) / h
    W = np.zeros((len(mean), len(nodes)))
    W[:, :-1] += m0 - m1
    W[:, 1:] += m1
    return W


def transition_weights(nodes, c, sigma, dt):
    """Integrals of the 1-D killed drifted-Gaussian density against each hat function.

    Row ``a`` corresponds to the start point ``nodes[a]``; ``dt = 0`` gives the
    identity (the density degenerates to a point mass).
    """
    if dt <= 0:
        return np.eye(len(nodes))
    sd = sigma * math.sqrt(dt)
    direct = _gauss_hat_weights(nodes, nodes + c * dt, sd)
    image = _gauss_hat_weights(nodes, -nodes + c * dt, sd)
    return direct - np.exp(-2.0 * c * nodes / sigma**2)[:, None] * image


def claim_hat_weights(nodes, dist: ClaimDist):
    """``Q[i, j] = int_0^{y_i} hat_j(y_i - w) p(w) dw``: claim convolution of hat functions.

    ``(Q @ v)[i]`` is ``E v(y_i - Z)`` for the piecewise-linear interpolant of
    ``v``, with states below zero contributing nothing.
    """
    n = len(nodes)
    Q = np.zeros((n, n))
    for i in range(1, n):
        y = nodes[i]
        lo = nodes[:i]
        hi = nodes[1:i + 1]
        h = hi - lo
        # cell [lo, hi] in state space corresponds to claims w in [y - hi, y - lo]
        mass = dist.cdf(y - lo) - dist.cdf(y - hi)
        mom = dist.partial_moment(y - hi, y - lo)
        # rising part (v - lo)/h = (y - w - lo)/h
        rise = ((y - lo) * mass - mom) / h
        Q[i, 1:i + 1] += rise
        Q[i, :i] += mass - rise
    return Q


def _terminal_claim_term(params: ModelParams, x1, x2):
    f1 = params.claim1.cdf(x1)[:, None]
    f2 = params.claim2.cdf(x2)[None, :]
    pos1 = (x1 > 0)[:, None]
    pos2 = (x2 > 0)[None, :]
    J = params.lambda1 * f1 * pos2 + params.lambda2 * f2 * pos1 + params.lambda3 * f1 * f2
    J = J * pos1 * pos2
    return J


def _discount_weights(lam: float, h: float):
    """``(A, B)`` with ``A = int_0^h e^{-lam u}(1 - u/h) du`` and ``B = int_0^h e^{-lam u} u/h du``.

    Integrating the discount exactly against a piecewise-linear integrand keeps
    the constant mode exact, so far-field values cannot creep above one.
    """
    q = lam * h
    if q < 1e-4:
        return h * (0.5 - q / 6 + q * q / 24), h * (0.5 - q / 3 + q * q / 8)
    e = math.exp(-q)
    return h * (q - 1 + e) / (q * q), h * (1 - e * (1 + q)) / (q * q)


class _Operator:
    """Discrete ``Phi -> int int G Phi`` on a grid, built once per solve."""

    def __init__(self, grid: SolverGrid, params: ModelParams):
        self.grid = grid
        self.params = params
        t = grid.t_nodes
        self.x1, self.x2 = grid.x_nodes(0), grid.x_nodes(1)
        self.dt = t[1] - t[0]
        n_t = grid.n_t
        self.Q1 = claim_hat_weights(self.x1, params.claim1)
        self.Q2 = claim_hat_weights(self.x2, params.claim2)
        self.P1 = [transition_weights(self.x1, params.c1, params.sigma1, d * self.dt) for d in range(n_t)]
        self.P2 = [transition_weights(self.x2, params.c2, params.sigma2, d * self.dt) for d in range(n_t)]
        self.A, self.B = _discount_weights(params.lambda_total, self.dt)
        self.decay = np.exp(-params.lambda_total * self.dt * np.arange(n_t))
        self.J_terminal = _terminal_claim_term(params, self.x1, self.x2)

    def claim_term(self, phi: np.ndarray) -> np.ndarray:
        lam1, lam2, lam3 = self.params.lambdas
        a = self.Q1 @ phi
        J = lam1 * a + lam2 * (phi @ self.Q2.T) + lam3 * (a @ self.Q2.T)
        J[-1] = self.J_terminal
        return J

    def apply(self, phi: np.ndarray) -> np.ndarray:
        J = self.claim_term(phi)
        n_t = self.grid.n_t
        out = np.zeros_like(phi)
        out[: n_t - 1] += self.A * J[: n_t - 1]
        for d in range(1, n_t):
            # pairs (i, i + d); the last pair sits on t = T and has no cell to its right
            n_pairs = n_t - d
            moved = self.P1[d] @ J[d:] @ self.P2[d].T
            w = np.full(n_pairs, self.decay[d - 1] * self.B + self.decay[d] * self.A)
            w[-1] = self.decay[d - 1] * self.B
            out[:n_pairs] += w[:, None, None] * moved
        return out


def picard_solve(
    grid: SolverGrid,
    params: ModelParams,
    tol: float = DEFAULT_TOL,
    k_max: int = DEFAULT_KMAX,
    F: Field | None = None,
):
    """Successive substitution ``Phi <- F + int int G Phi`` until the sup-norm update is below ``tol``.

    Returns ``(field, report)``; on non-convergence the last iterate is
    returned with ``report.converged = False``.
    """
    if F is None:
        F = assemble_F(grid, params)
    op = _Operator(grid, params)
    f = F.values
    phi = f.copy()
    increments = []
    converged = False
    for _ in range(k_max):
        new = f + op.apply(phi)
        new[-1] = f[-1]
        inc = float(np.max(np.abs(new - phi)))
        phi = new
        increments.append(inc)
        if inc < tol:
            converged = True
            break
    positive = [v for v in increments if v > 0]
    if len(positive) >= 2:
        ratio = (positive[-1] / positive[0]) ** (1.0 / (len(positive) - 1))
    else:
        ratio = 0.0
    report = ConvergenceReport(len(increments), increments, converged, ratio,
                               (float(phi.min()), float(phi.max())))
    meta = dict(F.metadata)
    meta.update({"kind": "survival", "grid": grid.to_dict(), "convergence": report.to_dict()})
    return Field(F.t_nodes, F.x1_nodes, F.x2_nodes, phi, meta), report


def query(fld: Field, t: float, x) -> float:
    """Linear-in-time, bilinear-in-space interpolation; no extrapolation."""
    x1, x2 = float(x[0]), float(x[1])
    tn, n1, n2 = fld.t_nodes, fld.x1_nodes, fld.x2_nodes
    if not (tn[0] <= t <= tn[-1]) or not (0 <= x1 <= n1[-1]) or not (0 <= x2 <= n2[-1]):
        raise DomainError(f"query point {(t, x1, x2)} lies outside the field")

    def bracket(nodes, v):
        i = min(max(int(np.searchsorted(nodes, v, side="right")) - 1, 0), len(nodes) - 2)
        return i, (v - nodes[i]) / (nodes[i + 1] - nodes[i])

    def spatial(slice_):
        a, s = bracket(n1, x1)
        b, r = bracket(n2, x2)
        return ((1 - s) * (1 - r) * slice_[a, b] + s * (1 - r) * slice_[a + 1, b]
                + (1 - s) * r * slice_[a, b + 1] + s * r * slice_[a + 1, b + 1])

    if len(tn) == 1:
        return float(spatial(fld.values[0]))
    i, w = bracket(tn, t)
    return float((1 - w) * spatial(fld.values[i]) + w * spatial(fld.values[i + 1]))


def default_probes(grid: SolverGrid):
    """Nine probe points: three reserve pairs at three start times."""
    xi = grid.xi_max or grid.x_max
    times = [grid.tau, grid.tau + 0.25 * (grid.T - grid.tau), grid.tau + 0.5 * (grid.T - grid.tau)]
    pairs = [(0.25 * xi[0], 0.25 * xi[1]), (0.5 * xi[0], 0.25 * xi[1]), (0.5 * xi[0], 0.5 * xi[1])]
    return [(t, a, b) for t in times for (a, b) in pairs]

"""Monte Carlo simulation of the two-line surplus process and its minimum ruin time.

Claims arrive at exact event times of three independent Poisson clocks.
Between events and on a sub-grid of step ``dt_max`` the two drifted Brownian
components are advanced exactly; a Brownian-bridge test catches boundary
crossings that happen strictly between two grid points.  Each path draws its
randomness from a counter-based stream keyed by ``(seed, path index)`` so
estimates are reproducible whatever the batching or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import PreconditionError
from .model import ModelParams, require_valid
from .rng import PathStream, block_uniforms

_TAG_DIFFUSION = 0
# jump stream j (0, 1, 2) draws from tag j + 1
_CHUNK = 8192
_INF = math.inf


@njit(inline="always", cache=True)
def _claim_size(kind, par, v):
    if kind == 0:
        return -math.log1p(-v) / par
    return v * par


@njit(inline="always", cache=True)
def _advance(seed, p, k, sub, t0, t1, r1, r2, rt1, rt2, c1, c2, s1, s2):
    d = t1 - t0
    u0, u1, u2, u3 = block_uniforms(seed, p, _TAG_DIFFUSION, k, sub)
    rad = math.sqrt(-2.0 * math.log(u0))
    z1 = rad * math.cos(2.0 * math.pi * u1)
    z2 = rad * math.sin(2.0 * math.pi * u1)
    sq = math.sqrt(d)
    n1 = r1 + c1 * d + s1 * sq * z1
    n2 = r2 + c2 * d + s2 * sq * z2
    mid = t0 + 0.5 * d
    if rt1 == _INF:
        if n1 <= 0.0:
            rt1 = mid
        elif r1 > 0.0 and u2 < math.exp(-2.0 * r1 * n1 / (s1 * s1 * d)):
            rt1 = mid
    if rt2 == _INF:
        if n2 <= 0.0:
            rt2 = mid
        elif r2 > 0.0 and u3 < math.exp(-2.0 * r2 * n2 / (s2 * s2 * d)):
            rt2 = mid
    return n1, n2, rt1, rt2


@njit(inline="always", cache=True)
def _gap(seed, p, j, n, rate):
    u0, u1, u2, u3 = block_uniforms(seed, p, j + 1, n, 0)
    return -math.log(u0) / rate


@njit(nogil=True, cache=True)
def _simulate_paths(
    first, n, seed, x1, x2, start, horizon, dt_max,
    c1, c2, s1, s2, lam, kinds, pars,
    checkpoints, track_marginals,
    ruin_time, comp_ruin, final, jumps, ck_state, log, log_on,
):
    nck = checkpoints.shape[0]
    nlog = 0
    for i in range(n):
        p = first + i
        r1 = x1
        r2 = x2
        rt1 = start if r1 <= 0.0 else _INF
        rt2 = start if r2 <= 0.0 else _INF
        tmin = min(rt1, rt2)
        f1 = min(r1, 0.0) if rt1 == tmin else r1
        f2 = min(r2, 0.0) if rt2 == tmin else r2
        nj0 = 0
        nj1 = 0
        nj2 = 0
        # next event time and event index of each clock
        te0 = _INF
        te1 = _INF
        te2 = _INF
        ev0 = 0
        ev1 = 0
        ev2 = 0
        if lam[0] > 0.0:
            te0 = start + _gap(seed, p, 0, 0, lam[0])
        if lam[1] > 0.0:
            te1 = start + _gap(seed, p, 1, 0, lam[1])
        if lam[2] > 0.0:
            te2 = start + _gap(seed, p, 2, 0, lam[2])
        ci = 0
        t = start
        k = 0
        if track_marginals:
            alive = rt1 == _INF or rt2 == _INF
        else:
            alive = tmin == _INF
        # checkpoints at start are recorded even for paths ruined at start
        while ci < nck and checkpoints[ci] <= start:
            if tmin > start:
                ck_state[i, ci, 0] = r1
                ck_state[i, ci, 1] = r2
            ci += 1
        while alive and t < horizon:
            t_end = start + (k + 1) * dt_max
            if t_end > horizon:
                t_end = horizon
            sub = 0
            while alive:
                jn = 0
                te = te0
                if te1 < te:
                    jn = 1
                    te = te1
                if te2 < te:
                    jn = 2
                    te = te2
                tc = checkpoints[ci] if ci < nck else _INF
                is_ck = tc <= te
                ev = tc if is_ck else te
                if ev > t_end:
                    break
                if ev > t:
                    r1, r2, rt1, rt2 = _advance(seed, p, k, sub, t, ev, r1, r2, rt1, rt2, c1, c2, s1, s2)
                    sub += 1
                    t = ev
                    if tmin == _INF and (rt1 < _INF or rt2 < _INF):
                        tmin = min(rt1, rt2)
                        f1 = min(r1, 0.0) if rt1 == tmin else r1
                        f2 = min(r2, 0.0) if rt2 == tmin else r2
                if is_ck:
                    if tmin > ev:
                        ck_state[i, ci, 0] = r1
                        ck_state[i, ci, 1] = r2
                    ci += 1
                else:
                    if jn == 0:
                        en = ev0
                    elif jn == 1:
                        en = ev1
                    else:
                        en = ev2
                    u0, u1, u2, u3 = block_uniforms(seed, p, jn + 1, en, 0)
                    dz1 = 0.0
                    dz2 = 0.0
                    if jn != 1:
                        dz1 = _claim_size(kinds[0], pars[0], u1 - 2.0**-53)
                    if jn != 0:
                        dz2 = _claim_size(kinds[1], pars[1], u2 - 2.0**-53)
                    r1 -= dz1
                    r2 -= dz2
                    if tmin == _INF:
                        if jn == 0:
                            nj0 += 1
                        elif jn == 1:
                            nj1 += 1
                        else:
                            nj2 += 1
                    if rt1 == _INF and dz1 > 0.0 and r1 <= 0.0:
                        rt1 = ev
                    if rt2 == _INF and dz2 > 0.0 and r2 <= 0.0:
                        rt2 = ev
                    if tmin == _INF and (rt1 < _INF or rt2 < _INF):
                        tmin = ev
                        f1 = r1
                        f2 = r2
                    if log_on and nlog < log.shape[0]:
                        log[nlog, 0] = p
                        log[nlog, 1] = ev
                        log[nlog, 2] = jn + 1
                        log[nlog, 3] = dz1
                        log[nlog, 4] = dz2
                        log[nlog, 5] = r1
                        log[nlog, 6] = r2
                        nlog += 1
                    if jn == 0:
                        ev0 += 1
                        te0 = ev + _gap(seed, p, 0, ev0, lam[0])
                    elif jn == 1:
                        ev1 += 1
                        te1 = ev + _gap(seed, p, 1, ev1, lam[1])
                    else:
                        ev2 += 1
                        te2 = ev + _gap(seed, p, 2, ev2, lam[2])
                if track_marginals:
                    alive = rt1 == _INF or rt2 == _INF
                else:
                    alive = tmin == _INF
            if alive and t_end > t:
                r1, r2, rt1, rt2 = _advance(seed, p, k, sub, t, t_end, r1, r2, rt1, rt2, c1, c2, s1, s2)
                t = t_end
                if tmin == _INF and (rt1 < _INF or rt2 < _INF):
                    tmin = min(rt1, rt2)
                    f1 = min(r1, 0.0) if rt1 == tmin else r1
                    f2 = min(r2, 0.0) if rt2 == tmin else r2
                if track_marginals:
                    alive = rt1 == _INF or rt2 == _INF
                else:
                    alive = tmin == _INF
            k += 1
        if tmin == _INF:
            f1 = r1
            f2 = r2
        ruin_time[i] = tmin
        comp_ruin[i, 0] = rt1
        comp_ruin[i, 1] = rt2
        final[i, 0] = f1
        final[i, 1] = f2
        jumps[i, 0] = nj0
        jumps[i, 1] = nj1
        jumps[i, 2] = nj2
    return nlog


@njit(nogil=True, cache=True)
def _count_common_shocks(first, n, seed, rate, t, kinds, pars, a1, b1, a2, b2, out):
    for i in range(n):
        p = first + i
        clock = 0.0
        e = 0
        count = 0
        while True:
            u0, u1, u2, u3 = block_uniforms(seed, p, 3, e, 0)
            clock += -math.log(u0) / rate
            if clock > t:
                break
            z1 = _claim_size(kinds[0], pars[0], u1 - 2.0**-53)
            z2 = _claim_size(kinds[1], pars[1], u2 - 2.0**-53)
            if a1 < z1 < b1 and a2 < z2 < b2:
                count += 1
            e += 1
        out[i] = count


@dataclass(frozen=True)
class PathOutcome:
    """Verdict of one simulated trajectory."""

    ruined: bool
    ruin_time: float | None
    final_state: tuple[float, float]
    n_jumps: tuple[int, int, int]
    events: tuple[tuple, ...] = ()


@dataclass(frozen=True)
class McEstimate:
    p_hat: float
    std_err: float
    n_paths: int
    seed: int
    x0: tuple[float, float] = (math.nan, math.nan)
    start: float = math.nan
    horizon: float = math.nan

    CSV_HEADER = ("x1", "x2", "start", "horizon", "n_paths", "seed", "p_hat", "std_err")

    def csv_row(self) -> tuple:
        return (self.x0[0], self.x0[1], self.start, self.horizon, self.n_paths, self.seed, self.p_hat, self.std_err)


def _bernoulli_estimate(survived: np.ndarray, seed, x0, start, horizon) -> McEstimate:
    n = survived.size
    p = float(np.count_nonzero(survived)) / n
    return McEstimate(p, math.sqrt(p * (1.0 - p) / n), n, int(seed), (float(x0[0]), float(x0[1])), start, horizon)


@dataclass
class BatchResult:
    """Per-path arrays from :func:`simulate_batch`; ruin times are ``inf`` on survival."""

    ruin_time: np.ndarray
    component_ruin_time: np.ndarray
    final_state: np.ndarray
    n_jumps: np.ndarray
    checkpoints: np.ndarray
    checkpoint_state: np.ndarray
    horizon: float

    @property
    def ruined(self) -> np.ndarray:
        return self.ruin_time <= self.horizon

    def line_survived(self) -> np.ndarray:
        """Survival of each line on its own, ignoring the other's ruin.

        Only meaningful when the batch was run with ``track_marginals=True``.
        """
        return ~(self.component_ruin_time <= self.horizon)


def _check_common(params, x0, start, horizon, dt_max):
    require_valid(params)
    x0 = (float(x0[0]), float(x0[1]))
    if not (x0[0] >= 0 and x0[1] >= 0):
        raise PreconditionError(f"initial reserve must be componentwise >= 0, got {x0}")
    if not start < horizon:
        raise PreconditionError(f"start < horizon required, got start={start}, horizon={horizon}")
    if not dt_max > 0:
        raise PreconditionError("dt_max must be > 0")
    return x0


def _check_seed(seed):
    if not (0 <= int(seed) < 2**64):
        raise PreconditionError("seed must be an unsigned 64-bit integer")
    return int(seed)


def simulate_batch(
    params: ModelParams,
    x0,
    start: float,
    horizon: float,
    n_paths: int,
    dt_max: float,
    seed: int,
    checkpoints: Sequence[float] = (),
    track_marginals: bool = False,
    first_path: int = 0,
    n_workers: int = 1,
) -> BatchResult:
    """Simulate paths ``first_path .. first_path + n_paths - 1``.

    With ``track_marginals`` each line keeps being simulated after the other is
    ruined, so per-line ruin times are available.  ``checkpoint_state`` holds
    the surplus at each checkpoint, or NaN when the path was ruined before it.
    """
    x0 = _check_common(params, x0, start, horizon, dt_max)
    seed = _check_seed(seed)
    if n_paths < 1:
        raise PreconditionError("n_paths must be >= 1")
    ck = np.sort(np.asarray(checkpoints, dtype=float))
    if ck.size and (ck[0] < start or ck[-1] > horizon):
        raise PreconditionError("checkpoints must lie in [start, horizon]")

    ruin_time = np.empty(n_paths)
    comp_ruin = np.empty((n_paths, 2))
    final = np.empty((n_paths, 2))
    jumps = np.empty((n_paths, 3), dtype=np.int64)
    ck_state = np.full((n_paths, ck.size, 2), np.nan)
    lam = params.lambdas
    kinds = np.array([params.claim1.code, params.claim2.code], dtype=np.int64)
    pars = np.array([params.claim1.param, params.claim2.param])
    no_log = np.empty((0, 7))

    def run(lo, hi):
        _simulate_paths(
            first_path + lo, hi - lo, np.uint64(seed), x0[0], x0[1], float(start), float(horizon), float(dt_max),
            params.c1, params.c2, params.sigma1, params.sigma2, lam, kinds, pars,
            ck, track_marginals,
            ruin_time[lo:hi], comp_ruin[lo:hi], final[lo:hi], jumps[lo:hi], ck_state[lo:hi], no_log, False,
        )

    bounds = [(lo, min(lo + _CHUNK, n_paths)) for lo in range(0, n_paths, _CHUNK)]
    if n_workers <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            run(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(lambda b: run(*b), bounds))
    return BatchResult(ruin_time, comp_ruin, final, jumps, ck, ck_state, float(horizon))


def sample_path(
    params: ModelParams,
    x0,
    start: float,
    horizon: float,
    dt_max: float,
    stream: PathStream,
    record_events: bool = False,
    max_events: int = 100_000,
) -> PathOutcome:
    """Simulate a single path on ``[start, horizon]`` from the given stream.

    With ``record_events`` the claim events are returned as rows
    ``(path, event_time, stream, dz1, dz2, r1, r2)`` with the surplus right
    after the claim.
    """
    x0 = _check_common(params, x0, start, horizon, dt_max)
    ruin_time = np.empty(1)
    comp_ruin = np.empty((1, 2))
    final = np.empty((1, 2))
    jumps = np.empty((1, 3), dtype=np.int64)
    ck = np.empty(0)
    ck_state = np.empty((1, 0, 2))
    log = np.empty((max_events if record_events else 0, 7))
    nlog = _simulate_paths(
        stream.index, 1, np.uint64(stream.seed), x0[0], x0[1], float(start), float(horizon), float(dt_max),
        params.c1, params.c2, params.sigma1, params.sigma2, params.lambdas,
        np.array([params.claim1.code, params.claim2.code], dtype=np.int64),
        np.array([params.claim1.param, params.claim2.param]),
        ck, False, ruin_time, comp_ruin, final, jumps, ck_state, log, record_events,
    )
    ruined = bool(ruin_time[0] <= horizon)
    events = tuple(
        (int(row[0]), float(row[1]), int(row[2]), float(row[3]), float(row[4]), float(row[5]), float(row[6]))
        for row in log[:nlog]
    )
    return PathOutcome(
        ruined,
        float(ruin_time[0]) if ruined else None,
        (float(final[0, 0]), float(final[0, 1])),
        tuple(int(v) for v in jumps[0]),
        events,
    )


def estimate_survival(
    params: ModelParams,
    x0,
    start: float,
    horizon: float,
    n_paths: int,
    dt_max: float,
    seed: int,
    n_workers: int = 1,
) -> McEstimate:
    """Monte Carlo estimate of the finite-time minimum survival probability."""
    batch = simulate_batch(params, x0, start, horizon, n_paths, dt_max, seed, n_workers=n_workers)
    return _bernoulli_estimate(~batch.ruined, seed, x0, float(start), float(horizon))


@dataclass(frozen=True)
class UltimateEstimate:
    """Horizon-truncated estimate of the ultimate survival probability.

    ``estimate`` is an upper bound in expectation: survival to ``t_cut`` can
    only exceed survival forever.  ``doubled`` repeats the run to ``2 t_cut``
    with the same seed; ``stable`` records whether the two differ by less than
    two standard errors.
    """

    estimate: McEstimate
    t_cut: float
    doubled: McEstimate | None = None

    @property
    def p_hat(self) -> float:
        return self.estimate.p_hat

    @property
    def std_err(self) -> float:
        return self.estimate.std_err

    @property
    def stable(self) -> bool | None:
        if self.doubled is None:
            return None
        diff = abs(self.doubled.p_hat - self.estimate.p_hat)
        return diff == 0.0 or diff < 2.0 * self.estimate.std_err


def net_profit_margins(params: ModelParams) -> np.ndarray:
    return params.c - params.claim_drain()


def estimate_ultimate_survival(
    params: ModelParams,
    x0,
    t_cut: float,
    n_paths: int,
    dt_max: float,
    seed: int,
    check_doubling: bool = True,
    n_workers: int = 1,
) -> UltimateEstimate:
    require_valid(params)
    margins = net_profit_margins(params)
    if np.any(margins <= 0):
        raise PreconditionError(
            f"net profit condition fails (premium minus expected claim drain = {margins.tolist()}); "
            "ultimate survival is 0 and horizon truncation is meaningless"
        )
    est = estimate_survival(params, x0, 0.0, t_cut, n_paths, dt_max, seed, n_workers)
    doubled = None
    if check_doubling:
        doubled = estimate_survival(params, x0, 0.0, 2.0 * t_cut, n_paths, dt_max, seed, n_workers)
    return UltimateEstimate(est, float(t_cut), doubled)


def empirical_jump_measure(params: ModelParams, t: float, region, n_reps: int, seed: int):
    """Mean and standard error of the number of common-shock claim pairs in ``region``.

    ``region`` is ``((a1, b1), (a2, b2))`` meaning the open box
    ``a1 < z1 < b1, a2 < z2 < b2``.  Only the common stream may be active.
    """
    require_valid(params)
    if params.lambda1 != 0 or params.lambda2 != 0:
        raise PreconditionError("a single common stream is required: set lambda1 = lambda2 = 0")
    if n_reps < 2:
        raise PreconditionError("n_reps must be >= 2")
    (a1, b1), (a2, b2) = region
    counts = np.zeros(n_reps, dtype=np.int64)
    if params.lambda3 > 0 and t > 0:
        _count_common_shocks(
            0, n_reps, np.uint64(_check_seed(seed)), params.lambda3, float(t),
            np.array([params.claim1.code, params.claim2.code], dtype=np.int64),
            np.array([params.claim1.param, params.claim2.param]),
            float(a1), float(b1), float(a2), float(b2), counts,
        )
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(n_reps))


def expected_jump_measure(params: ModelParams, t: float, region) -> float:
    """Intensity measure ``lambda3 t F1(box1) F2(box2)`` of the common stream."""
    (a1, b1), (a2, b2) = region
    f1, f2 = params.claim1, params.claim2
    return params.lambda3 * t * float(f1.cdf(b1) - f1.cdf(a1)) * float(f2.cdf(b2) - f2.cdf(a2))


@dataclass(frozen=True)
class MartingaleReport:
    checkpoints: np.ndarray
    means: np.ndarray
    std_errs: np.ndarray
    initial_value: float

    @property
    def deviations(self) -> np.ndarray:
        return np.abs(self.means - self.initial_value)

    @property
    def max_deviation(self) -> float:
        return float(self.deviations.max()) if self.deviations.size else 0.0

    def within(self, n_se: float = 3.0) -> bool:
        return bool(np.all(self.deviations <= n_se * self.std_errs))


def martingale_check(
    params: ModelParams,
    x0,
    start: float,
    horizon: float,
    checkpoints: Sequence[float],
    n_paths: int,
    seed: int,
    phi: Callable,
    dt_max: float = 1e-2,
) -> MartingaleReport:
    """Track the mean of ``phi(t, R(t))`` along simulated paths, 0 once ruined.

    ``phi(t, x1, x2)`` must accept arrays.  For the true survival function the
    mean stays at ``phi(start, x0)`` at every checkpoint.
    """
    batch = simulate_batch(params, x0, start, horizon, n_paths, dt_max, seed, checkpoints=checkpoints)
    means, ses = [], []
    for j, t in enumerate(batch.checkpoints):
        st = batch.checkpoint_state[:, j, :]
        alive = ~np.isnan(st[:, 0])
        vals = np.zeros(n_paths)
        if alive.any():
            vals[alive] = np.asarray(phi(t, st[alive, 0], st[alive, 1]), dtype=float)
        means.append(vals.mean())
        ses.append(vals.std(ddof=1) / math.sqrt(n_paths) if n_paths > 1 else 0.0)
    x0 = (float(x0[0]), float(x0[1]))
    init = float(phi(start, np.array([x0[0]]), np.array([x0[1]]))[0]) if min(x0) > 0 else 0.0
    return MartingaleReport(batch.checkpoints, np.array(means), np.array(ses), init)

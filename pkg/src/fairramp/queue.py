"""Single-server queue laboratory.

Exact M/M/1 and M/G/1 processor-sharing simulation, the forward-recurrence
(residual work) law, the one-dimensional reflected Brownian motion built
from the explicit running-minimum reflection, and diffusion scaling.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sfft

from . import _kernels as K
from .errors import UnstableLoad, ValidationError
from .rng import SeedLike, make_rng

__all__ = [
    "WorkDistribution",
    "QueuePath",
    "MM1Result",
    "PSResult",
    "RBMResult",
    "mm1_stationary",
    "simulate_mm1",
    "simulate_mg1_ps",
    "forward_recurrence_cdf",
    "rbm1_path",
    "rbm1_stationary_mean",
    "scale_workload",
    "time_weighted_pmf",
    "batch_means",
    "autocorrelation_time",
    "snapshot_ratio",
]


# ---------------------------------------------------------------------------
# work distributions


@dataclass(frozen=True)
class WorkDistribution:
    """Law of the work ``S`` brought by one customer.

    Use the constructors :meth:`exponential`, :meth:`deterministic` and
    :meth:`general`.  A general law is a piecewise-linear cdf given by the
    table ``(x, cdf)``; it is sampled by inverse-cdf interpolation.
    """

    kind: str
    mu: float
    x: Optional[np.ndarray] = None
    cdf_table: Optional[np.ndarray] = None

    @classmethod
    def exponential(cls, mu: float) -> "WorkDistribution":
        if not mu > 0:
            raise ValidationError("mu must be positive")
        return cls("exponential", float(mu))

    @classmethod
    def deterministic(cls, mean: float) -> "WorkDistribution":
        """Every customer brings exactly ``mean`` units of work."""
        if not mean > 0:
            raise ValidationError("mean work must be positive")
        return cls("deterministic", 1.0 / float(mean))

    @classmethod
    def general(cls, x, cdf) -> "WorkDistribution":
        x = np.asarray(x, dtype=float)
        F = np.asarray(cdf, dtype=float)
        if x.ndim != 1 or x.shape != F.shape or x.size < 2:
            raise ValidationError("cdf table needs matching 1-D x and cdf arrays of length >= 2")
        if x[0] < 0 or np.any(np.diff(x) <= 0):
            raise ValidationError("x must be non-negative and strictly increasing")
        if F[0] != 0.0 or F[-1] != 1.0 or np.any(np.diff(F) < 0):
            raise ValidationError("cdf must rise monotonically from 0 to 1")
        x.setflags(write=False)
        F.setflags(write=False)
        mean = float(np.sum(np.diff(x) * (1.0 - 0.5 * (F[1:] + F[:-1])))) + x[0]
        return cls("general", 1.0 / mean, x, F)

    @property
    def mean(self) -> float:
        return 1.0 / self.mu

    @property
    def second_moment(self) -> float:
        if self.kind == "exponential":
            return 2.0 / self.mu**2
        if self.kind == "deterministic":
            return 1.0 / self.mu**2
        # E S^2 = x0^2 + int 2x (1 - F(x)) dx; the integrand is quadratic on
        # each segment so Simpson's rule is exact.
        x, F = self.x, self.cdf_table
        a, b = x[:-1], x[1:]
        fa, fb = 2 * a * (1 - F[:-1]), 2 * b * (1 - F[1:])
        mid = 0.5 * (a + b)
        fm = 2 * mid * (1 - 0.5 * (F[:-1] + F[1:]))
        return float(x[0] ** 2 + np.sum((b - a) / 6.0 * (fa + 4 * fm + fb)))

    @property
    def sigma2(self) -> float:
        """``E(S^2) / E(S)``."""
        return self.second_moment / self.mean

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "exponential":
            return np.where(s > 0, -np.expm1(-self.mu * np.maximum(s, 0.0)), 0.0)
        if self.kind == "deterministic":
            return np.where(s >= self.mean, 1.0, 0.0)
        return np.interp(s, self.x, self.cdf_table, left=0.0, right=1.0)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind == "exponential":
            return rng.exponential(self.mean, size)
        if self.kind == "deterministic":
            return np.full(size, self.mean) if size is not None else self.mean
        return np.interp(rng.random(size), self.cdf_table, self.x)


def forward_recurrence_cdf(G: WorkDistribution, x):
    """Residual-work cdf ``G*(x) = mu * int_0^x (1 - G(z)) dz``."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    if G.kind == "exponential":
        return -np.expm1(-G.mu * x)
    if G.kind == "deterministic":
        return np.minimum(G.mu * x, 1.0)
    # piecewise-linear G: the integral of 1 - G is piecewise quadratic, and
    # exact at the table nodes via the trapezoid rule
    xs = np.concatenate(([0.0], G.x)) if G.x[0] > 0 else np.asarray(G.x)
    Fs = np.concatenate(([0.0], G.cdf_table)) if G.x[0] > 0 else np.asarray(G.cdf_table)
    surv = 1.0 - Fs
    nodes = np.concatenate(([0.0], np.cumsum(np.diff(xs) * 0.5 * (surv[1:] + surv[:-1]))))
    k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
    dx = np.minimum(x - xs[k], xs[k + 1] - xs[k])
    slope = (surv[k + 1] - surv[k]) / (xs[k + 1] - xs[k])
    partial = nodes[k] + surv[k] * dx + 0.5 * slope * dx * dx
    return np.minimum(G.mu * partial, 1.0)


# ---------------------------------------------------------------------------
# paths and estimators


@dataclass(frozen=True)
class QueuePath:
    """Piecewise-constant (event-driven) or sampled (Brownian) queue path.

    ``W`` is ``None`` for the M/M/1 birth-death chain, which does not track
    work.  ``arrived`` is the cumulative work brought by arrivals, kept so the
    balance identity ``W = W(0) + arrived - t + U`` can be checked.
    """

    times: np.ndarray
    N: Optional[np.ndarray]
    W: Optional[np.ndarray]
    U: np.ndarray
    arrived: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MM1Result:
    path: QueuePath
    pmf: np.ndarray
    mean: float
    std_err: float
    burn_in_time: float


@dataclass(frozen=True)
class PSResult:
    path: QueuePath
    residuals: np.ndarray
    sample_times: np.ndarray
    sample_counts: np.ndarray
    pmf: np.ndarray
    mean: float

    def residuals_at(self, k: int) -> np.ndarray:
        """Residual works of the customers present at sample time ``k``."""
        off = np.concatenate(([0], np.cumsum(self.sample_counts)))
        return self.residuals[off[k] : off[k + 1]]


@dataclass(frozen=True)
class RBMResult:
    path: QueuePath
    time_average: float
    burn_in: float
    reflection_violations: int = 0
    extra: dict = field(default_factory=dict)


def time_weighted_pmf(times, values, t_start: float, t_end: float) -> np.ndarray:
    """Occupation law of an integer step path on ``[t_start, t_end]``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values)
    lo = np.clip(times, t_start, t_end)
    hi = np.clip(np.append(times[1:], t_end), t_start, t_end)
    dur = hi - lo
    pmf = np.bincount(values.astype(np.int64), weights=dur)
    total = dur.sum()
    return pmf / total if total > 0 else pmf


def _step_integrals(times, values, edges) -> np.ndarray:
    """Integrals of a right-continuous step path over consecutive ``edges``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(values[:-1] * np.diff(times))))

    def integral_to(t):
        k = np.searchsorted(times, t, side="right") - 1
        k = np.clip(k, 0, times.size - 1)
        return cum[k] + values[k] * (t - times[k])

    return np.diff(integral_to(np.asarray(edges, dtype=float)))


def batch_means(times, values, t_start: float, t_end: float, n_batches: int = 50):
    """Time-average of a step path and its batch-means standard error."""
    edges = np.linspace(t_start, t_end, n_batches + 1)
    means = _step_integrals(times, values, edges) / np.diff(edges)
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(n_batches))


# ---------------------------------------------------------------------------
# M/M/1


def mm1_stationary(rho: float, n_max: Optional[int] = None) -> np.ndarray:
    """Geometric law ``P{N = n} = (1 - rho) rho^n`` on ``0..n_max``.

    With ``n_max=None`` the support is cut where the tail drops below 1e-15.
    """
    rho = float(rho)
    if rho >= 1.0:
        raise UnstableLoad(f"rho = {rho} >= 1 has no stationary law")
    if rho < 0.0:
        raise ValidationError("rho must be non-negative")
    if n_max is None:
        n_max = 0 if rho == 0.0 else int(np.ceil(np.log(1e-15) / np.log(rho)))
    n = np.arange(n_max + 1)
    return (1.0 - rho) * rho**n


def simulate_mm1(
    nu: float, mu: float, n_events: int, seed: SeedLike, n0: int = 0, burn_in: float = 0.2
) -> MM1Result:
    """Exact event-driven path of the M/M/1 queue-length chain.

    Statistics (time-weighted pmf, mean, batch-means standard error) use the
    path after the first ``burn_in`` fraction of elapsed time.
    """
    if nu < 0 or mu <= 0:
        raise ValidationError("need nu >= 0 and mu > 0")
    rng = make_rng(seed)
    n_events = int(n_events)
    expo = rng.standard_exponential(n_events)
    unif = rng.random(n_events)
    times = np.empty(n_events + 1)
    counts = np.empty(n_events + 1, dtype=np.int64)
    K.mm1_path(float(nu), float(mu), int(n0), expo, unif, times, counts)
    finite = np.isfinite(times)
    times, counts = times[finite], counts[finite]
    t_end = float(times[-1]) if times.size > 1 else 0.0
    idle = np.concatenate(([0.0], np.cumsum((counts[:-1] == 0) * np.diff(times))))
    path = QueuePath(times=times, N=counts, W=None, U=idle)
    if t_end <= 0.0:
        pmf = np.zeros(int(n0) + 1)
        pmf[int(n0)] = 1.0
        return MM1Result(path, pmf, float(n0), 0.0, 0.0)
    t0 = burn_in * t_end
    pmf = time_weighted_pmf(times, counts, t0, t_end)
    mean, se = batch_means(times, counts, t0, t_end)
    return MM1Result(path=path, pmf=pmf, mean=mean, std_err=se, burn_in_time=t0)


# ---------------------------------------------------------------------------
# M/G/1 processor sharing


def simulate_mg1_ps(
    nu: float,
    G: WorkDistribution,
    T: float,
    seed: SeedLike,
    sample_dt: float = 1.0,
    burn_in: float = 0.2,
) -> PSResult:
    """Event-driven M/G/1 queue under processor sharing.

    Each of the ``n`` customers present is served at rate ``1/n``.  The
    attained service per customer ``V(t) = int 1/N ds`` is a common virtual
    clock, so a customer arriving at virtual time ``v`` with work ``s``
    leaves when ``V`` reaches ``v + s``; a heap of these finish tags gives
    the next departure exactly.  Residual works of all customers present are
    recorded on a regular grid of spacing ``sample_dt`` after burn-in.
    """
    rho = nu / G.mu
    if rho >= 1.0:
        raise UnstableLoad(f"rho = {rho:.6g} >= 1")
    rng = make_rng(seed)
    t, V = 0.0, 0.0
    finish: list[float] = []
    sum_tags = 0.0  # sum of finish tags in system, so W = sum_tags - N V
    idle = 0.0
    arrived = 0.0
    t_times, t_N, t_W, t_U, t_A = [0.0], [0], [0.0], [0.0], [0.0]
    res_chunks, s_times, s_counts = [], [], []
    t_sample = burn_in * T
    batch = 4096
    gaps = rng.exponential(1.0 / nu, batch) if nu > 0 else np.full(batch, np.inf)
    works = G.sample(rng, batch)
    k = 0
    t_arr = gaps[0]

    def advance(dt):
        nonlocal t, V, idle
        n = len(finish)
        if n:
            V += dt / n
        else:
            idle += dt
        t += dt

    while t < T:
        n = len(finish)
        t_dep = t + (finish[0] - V) * n if n else np.inf
        t_next = min(t_arr, t_dep, T)
        while t_sample <= t_next and t_sample <= T:
            advance(t_sample - t)
            arr = np.fromiter(finish, float, len(finish)) - V
            res_chunks.append(np.maximum(arr, 0.0))
            s_times.append(t)
            s_counts.append(arr.size)
            t_sample += sample_dt
        if t_next >= T:
            advance(T - t)
            break
        advance(t_next - t)
        if t_arr <= t_dep:
            s = float(works[k])
            heapq.heappush(finish, V + s)
            sum_tags += V + s
            arrived += s
            k += 1
            if k == batch:
                gaps = rng.exponential(1.0 / nu, batch)
                works = G.sample(rng, batch)
                k = 0
            t_arr = t + gaps[k]
        else:
            sum_tags -= heapq.heappop(finish)
        n = len(finish)
        t_times.append(t)
        t_N.append(n)
        t_W.append(max(sum_tags - n * V, 0.0) if n else 0.0)
        t_U.append(idle)
        t_A.append(arrived)
        if n == 0:
            sum_tags = 0.0  # drop accumulated rounding once the system empties
    t_times.append(T)
    t_N.append(len(finish))
    t_W.append(max(sum_tags - len(finish) * V, 0.0) if finish else 0.0)
    t_U.append(idle)
    t_A.append(arrived)
    path = QueuePath(
        times=np.array(t_times),
        N=np.array(t_N, dtype=np.int64),
        W=np.array(t_W),
        U=np.array(t_U),
        arrived=np.array(t_A),
    )
    pmf = time_weighted_pmf(path.times, path.N, burn_in * T, T)
    mean = float(np.dot(np.arange(pmf.size), pmf))
    residuals = np.concatenate(res_chunks) if res_chunks else np.empty(0)
    return PSResult(
        path=path,
        residuals=residuals,
        sample_times=np.array(s_times),
        sample_counts=np.array(s_counts, dtype=np.int64),
        pmf=pmf,
        mean=mean,
    )


# ---------------------------------------------------------------------------
# reflected Brownian motion


def rbm1_stationary_mean(rho: float, sigma2: float) -> float:
    """Mean ``rho sigma^2 / (2 (1 - rho))`` of the exponential stationary law."""
    if rho >= 1.0:
        raise UnstableLoad(f"rho = {rho} >= 1")
    return rho * sigma2 / (2.0 * (1.0 - rho))


def rbm1_path(
    rho: float,
    sigma2: float,
    T: float,
    h: float,
    seed: SeedLike,
    w0: float = 0.0,
    burn_in: float = 0.2,
    record_every: int = 1,
    chunk: int = 1 << 20,
) -> RBMResult:
    """Reflected Brownian workload on the grid ``0, h, 2h, ..., T``.

    The free process ``X`` has increments with mean ``-(1 - rho) h`` and
    variance ``rho sigma2 h``; the reflected path is ``W = w0 + X + U`` with
    ``U(t) = max(0, -min_{s <= t} (w0 + X(s)))``, the exact reflection of
    the discretised input.  The path is generated in chunks so memory stays
    bounded; every ``record_every``-th grid point is kept in the returned
    path, while the time average after burn-in uses every grid point.
    """
    if h <= 0:
        raise ValidationError("h must be positive")
    if rho >= 1.0:
        raise UnstableLoad(f"rho = {rho} >= 1")
    if sigma2 < 0:
        raise ValidationError("sigma2 must be non-negative")
    rng = make_rng(seed)
    n_steps = int(round(T / h))
    drift = -(1.0 - rho) * h
    sd = np.sqrt(rho * sigma2 * h)
    first_avg = int(np.ceil(burn_in * n_steps))
    x_last, u_last = 0.0, max(0.0, -w0)
    total, count, violations = 0.0, 0, 0
    rec_t, rec_W, rec_U = [], [], []
    done = 0  # grid points already produced
    while done <= n_steps:
        m = min(chunk, n_steps + 1 - done)
        k = np.arange(done, done + m)
        inc = drift + sd * rng.standard_normal(m)
        if done == 0:
            inc[0] = 0.0  # X(0) = 0
        X = x_last + np.cumsum(inc)
        U = np.maximum(np.maximum.accumulate(-(w0 + X)), u_last)
        U = np.maximum(U, 0.0)
        W = w0 + X + U
        # reflection may only act where the reflected path sits at zero
        dU = np.diff(np.concatenate(([u_last], U)))
        violations += int(np.count_nonzero((dU > 0) & (W > 1e-12 * (1.0 + abs(w0)))))
        sel = k >= first_avg
        total += float(W[sel].sum())
        count += int(sel.sum())
        keep = (k % record_every) == 0
        rec_t.append(k[keep] * h)
        rec_W.append(W[keep])
        rec_U.append(U[keep])
        x_last, u_last = float(X[-1]), float(U[-1])
        done += m
    W_rec = np.maximum(np.concatenate(rec_W), 0.0)
    path = QueuePath(times=np.concatenate(rec_t), N=None, W=W_rec, U=np.concatenate(rec_U))
    avg = total / count if count else float("nan")
    return RBMResult(path=path, time_average=avg, burn_in=first_avg * h, reflection_violations=violations)


def scale_workload(path: QueuePath, rho: float) -> QueuePath:
    """Diffusion scaling ``W^(t) = (1 - rho) W(t / (1 - rho)^2)``.

    Times are multiplied by ``(1 - rho)^2``; ``W``, ``U`` and ``N`` by
    ``1 - rho``.
    """
    if rho >= 1.0:
        raise UnstableLoad(f"rho = {rho} >= 1")
    f = 1.0 - rho

    def sc(a):
        return None if a is None else f * np.asarray(a, dtype=float)

    return QueuePath(
        times=path.times * f * f,
        N=sc(path.N),
        W=sc(path.W),
        U=sc(path.U),
        arrived=sc(path.arrived),
    )


def autocorrelation_time(series, dt: float) -> float:
    """Integrated autocorrelation time of a regularly sampled series.

    The empirical autocorrelation (computed by FFT) is summed up to its
    first non-positive lag.
    """
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = x.size
    if n < 2 or not np.any(x):
        return 0.0
    f = sfft.rfft(x, n=2 * sfft.next_fast_len(n))
    acf = sfft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    stop = np.flatnonzero(acf <= 0.0)
    cut = int(stop[0]) if stop.size else n
    return float(dt * (acf[:cut].sum() - 0.5))


def snapshot_ratio(path: QueuePath, dt: float, burn_in: float = 0.2) -> float:
    """Mean time to drain the current workload over the workload's
    autocorrelation time.

    ``path`` is resampled on a grid of spacing ``dt``.  Small values mean
    the workload barely moves during the time a unit of work spends in the
    system.
    """
    t0 = path.times[0] + burn_in * (path.times[-1] - path.times[0])
    grid = np.arange(t0, path.times[-1], dt)
    k = np.searchsorted(path.times, grid, side="right") - 1
    w = path.W[k]
    return float(w.mean() / autocorrelation_time(w, dt))

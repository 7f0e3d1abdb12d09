"""Deterministic flow machinery: RK4 flow maps, variational solutions,
connection geometry, and Gaussian pushforward along heteroclinic orbits.

Everything here is a pure function of immutable inputs.  The integrator is a
fixed-step classical 4th-order method so that connection geometry (and the
golden values derived from it) is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, SaddleSpec, chart_from_local, chart_to_local

__all__ = [
    "DivergenceError",
    "ConnectionNotFound",
    "VariationalState",
    "EntranceData",
    "integrate_flow",
    "integrate_variational",
    "connection_entry",
    "initial_entrance",
    "pushforward_connection",
    "populate_network",
    "orbit_polyline",
]

DEFAULT_STEP = 1e-3
T_MAX = 100.0
_BISECT_TOL = 1e-10


class DivergenceError(RuntimeError):
    """State became non-finite; carries the last finite state."""

    def __init__(self, t, state):
        super().__init__(f"flow diverged near t={t:.6g}")
        self.t = t
        self.state = state


class ConnectionNotFound(RuntimeError):
    pass


@dataclass
class VariationalState:
    state: np.ndarray
    fundamental: np.ndarray
    time: float


@dataclass
class EntranceData:
    """Entrance triple at a saddle: base point, noise exponent, fluctuation law.

    ``mu`` is a distribution over ambient tangent vectors (frame "ambient",
    concrete mode) or over target-chart coordinates (frame "chart", abstract
    mode).  ``nu_coord``, when set, overrides the nu-coordinate of the base
    point derived from the chart (abstract networks have no meaningful
    entry-point geometry).
    """

    point: np.ndarray
    alpha: float
    mu: object  # exitmap Distribution
    frame: str = "ambient"
    nu_coord: float = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _steps_for(t: float, step: float):
    n = max(1, math.ceil(t / step - 1e-12))
    return n, t / n


def integrate_flow(fld, x0, t: float, step: float = DEFAULT_STEP) -> np.ndarray:
    """Flow x0 forward by time t >= 0 (negate the field for backward time)."""
    if t < 0:
        raise ValueError("t must be nonnegative; negate the field for backward time")
    x = np.asarray(x0, dtype=float).copy()
    if t == 0:
        return x
    n, h = _steps_for(t, step)
    for i in range(n):
        x = _rk4_step(fld.b, x, h)
        if not np.all(np.isfinite(x)):
            raise DivergenceError((i + 1) * h, x)
    return x


def integrate_variational(fld, x0, t: float, step: float = DEFAULT_STEP) -> VariationalState:
    """Jointly integrate the state and the fundamental matrix dPhi = Db(x) Phi."""
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]

    def rhs(z):
        x = z[:d]
        phi = z[d:].reshape(d, d)
        return np.concatenate([fld.b(x), (fld.jac(x) @ phi).ravel()])

    z = np.concatenate([x0, np.eye(d).ravel()])
    if t > 0:
        n, h = _steps_for(t, step)
        for i in range(n):
            z = _rk4_step(rhs, z, h)
            if not np.all(np.isfinite(z)):
                raise DivergenceError((i + 1) * h, z[:d])
    return VariationalState(state=z[:d], fundamental=z[d:].reshape(d, d), time=t)


def _box_gap(spec: NetworkSpec, target: SaddleSpec, x) -> float:
    """max_k |y^k| - R in the target chart; <= 0 means inside the box."""
    y = chart_to_local(target, x, check_domain=False)
    return float(np.max(np.abs(y)) - target.radius)


def _first_entry_time(fld, x0, gap, step, t_cap):
    """Integrate until gap(x) <= 0, then bisect the crossing time to 1e-10."""
    if gap(x0) <= 0.0:
        return 0.0, np.asarray(x0, dtype=float).copy()
    x = np.asarray(x0, dtype=float).copy()
    t = 0.0
    n = int(round(t_cap / step))
    for _ in range(n):
        x_new = _rk4_step(fld.b, x, step)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(t + step, x_new)
        if gap(x_new) <= 0.0:
            lo, hi = t, t + step
            # bisection on time, re-integrating from the bracket start
            while hi - lo > _BISECT_TOL:
                mid = 0.5 * (lo + hi)
                xm = integrate_flow(fld, x, mid - t, step=min(step, max(mid - t, 1e-15)))
                if gap(xm) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            xh = integrate_flow(fld, x, hi - t, step=min(step, max(hi - t, 1e-15)))
            return hi, xh
        x = x_new
        t += step
    return None, x


def connection_entry(spec: NetworkSpec, saddle_id: int, sign: int,
                     step: float = DEFAULT_STEP, t_max: float = T_MAX):
    """Travel time h, entry point and fundamental matrix for one connection.

    The orbit starts at q = z + sign * R * v1 and h is the first time it is
    inside the target box (all chart coordinates within R of the target).
    """
    conn = spec.connection(saddle_id, sign)
    src = spec.saddle(saddle_id)
    q = chart_from_local(src, sign * src.radius * _e(src.d, 0))
    if conn.is_leaf:
        return 0.0, q, np.eye(src.d)
    target = spec.saddle(conn.target)
    h, x_entry = _first_entry_time(
        spec.fld, q, lambda x: _box_gap(spec, target, x), step, t_max
    )
    if h is None:
        raise ConnectionNotFound(
            f"orbit from saddle {saddle_id} sign {'+' if sign > 0 else '-'} "
            f"did not reach saddle {conn.target} within t={t_max}"
        )
    if h == 0.0:
        return 0.0, q, np.eye(src.d)
    phi = integrate_variational(spec.fld, q, h, step=step).fundamental
    return h, x_entry, phi


def _e(d, k):
    v = np.zeros(d)
    v[k] = 1.0
    return v


def _noise_covariance(fld, x0, T: float, step: float) -> np.ndarray:
    """Covariance of Phi(T) int_0^T Phi^{-1}(s) sigma(S^s x0) dW(s).

    Composite trapezoid on the integrator grid, reusing the Phi samples.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    if T <= 0:
        return np.zeros((d, d))
    n, h = _steps_for(T, step)

    def rhs(z):
        x = z[:d]
        phi = z[d:].reshape(d, d)
        return np.concatenate([fld.b(x), (fld.jac(x) @ phi).ravel()])

    z = np.concatenate([x0, np.eye(d).ravel()])
    acc = np.zeros((d, d))

    def integrand(zz):
        x = zz[:d]
        phi_inv = np.linalg.inv(zz[d:].reshape(d, d))
        g = phi_inv @ fld.sigma_at(x)
        return g @ g.T

    prev = integrand(z)
    for _ in range(n):
        z = _rk4_step(rhs, z, h)
        cur = integrand(z)
        acc += 0.5 * h * (prev + cur)
        prev = cur
    phi_T = z[d:].reshape(d, d)
    return phi_T @ acc @ phi_T.T


def first_saddle_hit(spec: NetworkSpec, x0, step: float = DEFAULT_STEP,
                     t_max: float = T_MAX):
    """Identify which saddle box the orbit of x0 enters first, and when."""
    def gap(x):
        return min(_box_gap(spec, s, x) for s in spec.saddles)

    t_enter, x_enter = _first_entry_time(spec.fld, x0, gap, step, t_max)
    if t_enter is None:
        raise ConnectionNotFound("initial point never reaches any saddle box")
    sid = min(spec.saddles, key=lambda s: _box_gap(spec, s, x_enter)).id
    return sid, t_enter


def initial_entrance(spec: NetworkSpec, x0, first_saddle: int = None,
                     step: float = DEFAULT_STEP, t_max: float = T_MAX):
    """Deterministic approach to the first saddle: travel time plus one unit,
    landing point, and the Gaussian fluctuation accumulated on the way.

    Returns (t_tilde, EntranceData) with alpha = 1 and mu the centered
    Gaussian with the accumulated covariance (nondegenerate thanks to the
    extra time unit even when x0 already lies inside the box).
    """
    from .distributions import Gaussian  # local import to avoid a cycle

    if first_saddle is None:
        first_saddle, t_enter = first_saddle_hit(spec, x0, step=step, t_max=t_max)
    else:
        target = spec.saddle(first_saddle)
        t_enter, _ = _first_entry_time(
            spec.fld, x0, lambda x: _box_gap(spec, target, x), step, t_max
        )
        if t_enter is None:
            raise ConnectionNotFound(
                f"initial point never reaches the box of saddle {first_saddle}"
            )
    t_tilde = t_enter + 1.0
    point = integrate_flow(spec.fld, x0, t_tilde, step=step)
    cov = _noise_covariance(spec.fld, x0, t_tilde, step)
    return t_tilde, EntranceData(point=point, alpha=1.0, mu=Gaussian(np.zeros(spec.d), cov))


def pushforward_connection(conn, exit_data) -> EntranceData:
    """Transport an exit fluctuation law along a connection.

    The law is mapped by the connection's fundamental matrix; when the exit
    exponent is 1 an independent Gaussian (noise accumulated during the
    finite-time travel) is added, mirroring the indicator in the finite-time
    linearization.
    """
    from .distributions import Gaussian, Pushforward, Sum

    if conn.fundamental_matrix is None:
        raise ValueError(
            "connection has no fundamental matrix (abstract network or "
            "populate_network not run)"
        )
    mu = Pushforward(conn.fundamental_matrix, exit_data.F)
    if exit_data.beta == 1.0:
        gauss = Gaussian(np.zeros(len(conn.entry_point)), conn.entry_gauss_cov)
        mu = Sum([mu, gauss])
    return EntranceData(point=conn.entry_point, alpha=exit_data.beta, mu=mu)


def orbit_polyline(fld, x_start, t_total: float, step: float, max_points: int = 257) -> np.ndarray:
    """Sample the orbit of x_start over [0, t_total] as a (m, d) polyline."""
    x = np.asarray(x_start, dtype=float).copy()
    if t_total <= 0:
        return np.array([x, x])
    n, h = _steps_for(t_total, step)
    keep = max(2, min(max_points, n + 1))
    idx = np.unique(np.round(np.linspace(0, n, keep)).astype(int))
    pts = [x.copy()]
    for i in range(1, n + 1):
        x = _rk4_step(fld.b, x, h)
        if i in idx:
            pts.append(x.copy())
    return np.array(pts)


def populate_network(spec: NetworkSpec, step: float = DEFAULT_STEP,
                     t_max: float = T_MAX) -> NetworkSpec:
    """Fill in travel times, entry points, fundamental matrices, connection
    noise covariances, entrance nu-coordinates and orbit polylines for every
    non-leaf connection of a concrete network.  Idempotent."""
    if not spec.is_concrete:
        return spec
    for conn in spec.connections:
        if conn.travel_time is not None:
            continue
        h, x_entry, phi = connection_entry(spec, conn.source, conn.sign, step=step, t_max=t_max)
        conn.travel_time = h
        conn.entry_point = x_entry
        conn.fundamental_matrix = phi
        src = spec.saddle(conn.source)
        q = chart_from_local(src, conn.sign * src.radius * _e(src.d, 0))
        conn.orbit = orbit_polyline(spec.fld, q, h, step)
        if conn.is_leaf:
            conn.entry_gauss_cov = np.zeros((src.d, src.d))
            if conn.exit_point is None:
                conn.exit_point = q
            continue
        conn.entry_gauss_cov = _noise_covariance(spec.fld, q, h, step) if h > 0 else np.zeros(
            (src.d, src.d)
        )
        target = spec.saddle(conn.target)
        y = chart_to_local(target, x_entry, check_domain=False)
        conn.entrance_nu_coord = float(y[target.nu - 1])
    return spec

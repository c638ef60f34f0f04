"""Cascade superstructure: configurations, simulation and power.

Stages are numbered 1..N in the public API.  Stage ``j`` receives the feed
(if it is the feed stage), the retentate of stage ``j-1`` and permeate
recycles from stages ``j+1`` (Recy1) and ``j+2`` (Recy2).  Only stages 1 and
2 may send permeate to the permeate product; only stages N-1 and N may send
retentate to the retentate product.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DomainError, RecycleDivergence
from .permeator import (
    EPS_THETA,
    MixtureSpec,
    PermeationResult,
    Phase,
    check_admissible,
    crossflow_kernel,
    k_kernel,
)

FLOW_CAP = 10.0
RECYCLE_TOL = 1e-10
MAX_SWEEPS = 500
WEGSTEIN_SWEEPS = 4


class Route(enum.IntEnum):
    RECY1 = 0
    RECY2 = 1
    BYPASS = 2
    INACTIVE = 3


class RetentateRoute(enum.IntEnum):
    TO_STAGE_N = 0
    TO_PRODUCT = 1


_ROUTE_CODE = {Route.RECY1: "R1", Route.RECY2: "R2", Route.BYPASS: "B", Route.INACTIVE: "-"}
_CODE_ROUTE = {v: k for k, v in _ROUTE_CODE.items()}


def legal_routes(j: int, n: int, allow_inactive: bool = False) -> tuple[Route, ...]:
    routes = []
    if j >= 2:
        routes.append(Route.RECY1)
    if j >= 3:
        routes.append(Route.RECY2)
    if j <= 2:
        routes.append(Route.BYPASS)
    if allow_inactive:
        routes.append(Route.INACTIVE)
    return tuple(routes)


@dataclass(frozen=True, order=True)
class Configuration:
    """Discrete routing choices of the superstructure."""

    feed_stage: int
    permeate_routes: tuple[Route, ...]
    retentate_route: RetentateRoute = RetentateRoute.TO_STAGE_N

    def __post_init__(self):
        n = len(self.permeate_routes)
        if n < 1:
            raise DomainError("a configuration needs at least one stage")
        if not 1 <= self.feed_stage <= n:
            raise DomainError(f"feed stage {self.feed_stage} outside 1..{n}")
        routes = tuple(Route(r) for r in self.permeate_routes)
        object.__setattr__(self, "permeate_routes", routes)
        object.__setattr__(self, "retentate_route", RetentateRoute(self.retentate_route))
        for j, route in enumerate(routes, start=1):
            if route not in legal_routes(j, n, allow_inactive=True):
                raise DomainError(f"route {route.name} is not legal at stage {j}")

    @property
    def n_stages(self) -> int:
        return len(self.permeate_routes)

    def route(self, j: int) -> Route:
        return self.permeate_routes[j - 1]

    def is_inactive(self, j: int) -> bool:
        return self.permeate_routes[j - 1] is Route.INACTIVE

    def retentate_target(self, j: int) -> int | None:
        """Stage receiving the retentate of stage ``j``; None means the product."""
        n = self.n_stages
        if j <= n - 2:
            return j + 1
        if j == n - 1 and self.retentate_route is RetentateRoute.TO_STAGE_N:
            return n
        return None

    def permeate_target(self, j: int) -> int | None:
        """Stage receiving the permeate of stage ``j``; None means product or nothing."""
        route = self.route(j)
        if route is Route.RECY1:
            return j - 1
        if route is Route.RECY2:
            return j - 2
        return None

    def reachable(self) -> tuple[bool, ...]:
        """Stages that can carry flow given the routing (inactive stages pass flow on)."""
        n = self.n_stages
        seen = [False] * (n + 1)
        stack = [self.feed_stage]
        while stack:
            j = stack.pop()
            if seen[j]:
                continue
            seen[j] = True
            targets = [self.retentate_target(j)]
            if not self.is_inactive(j):
                targets.append(self.permeate_target(j))
            stack.extend(t for t in targets if t is not None and not seen[t])
        return tuple(seen[1:])

    def active_stages(self) -> tuple[int, ...]:
        """Reachable stages that actually separate (not marked inactive)."""
        return tuple(j for j, alive in enumerate(self.reachable(), start=1)
                     if alive and not self.is_inactive(j))

    def canonical(self) -> "Configuration":
        """Same flowsheet with unreachable stages' routing reset to a fixed choice."""
        alive = self.reachable()
        routes = []
        for j, route in enumerate(self.permeate_routes, start=1):
            if not alive[j - 1]:
                route = Route.INACTIVE if route is Route.INACTIVE else legal_routes(j, self.n_stages)[0]
            routes.append(route)
        retentate = self.retentate_route
        if self.n_stages == 1 or not alive[self.n_stages - 2]:
            retentate = RetentateRoute.TO_STAGE_N
        return Configuration(self.feed_stage, tuple(routes), retentate)

    def encode(self) -> str:
        routes = ",".join(_ROUTE_CODE[r] for r in self.permeate_routes)
        ret = "N" if self.retentate_route is RetentateRoute.TO_STAGE_N else "P"
        return f"F{self.feed_stage}|{routes}|{ret}"

    @classmethod
    def decode(cls, text: str) -> "Configuration":
        try:
            feed, routes, ret = text.strip().split("|")
            return cls(int(feed.lstrip("Ff")),
                       tuple(_CODE_ROUTE[r.strip()] for r in routes.split(",")),
                       RetentateRoute.TO_STAGE_N if ret.strip() == "N" else RetentateRoute.TO_PRODUCT)
        except (ValueError, KeyError) as exc:
            raise DomainError(f"cannot parse configuration {text!r}") from exc

    def __str__(self):
        return self.encode()


def enumerate_configurations(n: int, allow_inactive: bool = False,
                             dedupe: bool = True) -> list[Configuration]:
    """All legal routings of an ``n``-stage superstructure.

    With ``dedupe`` the list is reduced to distinct flowsheets: routing
    choices of stages that can never receive flow are collapsed.
    """
    if not 1 <= n <= 6:
        raise DomainError(f"stage count must be in 1..6, got {n}")
    per_stage = [legal_routes(j, n, allow_inactive) for j in range(1, n + 1)]
    ret_choices = (RetentateRoute.TO_STAGE_N, RetentateRoute.TO_PRODUCT) if n >= 2 else (RetentateRoute.TO_STAGE_N,)
    configs = []
    for feed in range(1, n + 1):
        for routes in itertools.product(*per_stage):
            for ret in ret_choices:
                configs.append(Configuration(feed, routes, ret))
    if not dedupe:
        return configs
    unique = {}
    for c in configs:
        unique.setdefault(c.canonical(), None)
    return list(unique)


def count_pressure_machines(config: Configuration) -> int:
    """Intermediate compressors/pumps, excluding the permeate-product machine.

    A Recy1 arc from stage j-1 and a Recy2 arc from stage j both end at
    mixer j-2 and share one machine.
    """
    alive = config.reachable()

    def has(j, route):
        return alive[j - 1] and config.route(j) is route

    n = config.n_stages
    count = sum(has(j, Route.RECY1) for j in range(2, n + 1))
    count += sum(has(j, Route.RECY2) for j in range(3, n + 1))
    count -= sum(has(j - 1, Route.RECY1) and has(j, Route.RECY2) for j in range(3, n + 1))
    return count


@dataclass(frozen=True)
class ProblemSpec:
    """Separation task: feed, product targets, mixture and pressure window.

    ``u_lo``/``u_up`` are in driving-force units: ln(pressure ratio) for
    gases, trans-membrane pressure difference in Pa for liquids.
    """

    n_stages: int
    feed_flow: float
    x_feed: float
    y_target: float
    recovery: float
    mixture: MixtureSpec
    u_lo: float
    u_up: float
    eta_comp: float = 0.75
    eta_pump: float = 0.75
    eta_tc: float = 0.80

    def __post_init__(self):
        if self.n_stages < 1:
            raise DomainError("n_stages must be positive")
        if self.feed_flow <= 0:
            raise DomainError("feed flow must be positive")
        if not 0 < self.x_feed < self.y_target < 1:
            raise DomainError("need 0 < x_feed < y_target < 1")
        if not 0 < self.recovery < 1:
            raise DomainError("recovery must lie in (0, 1)")
        if not 0 < self.u_lo <= self.u_up:
            raise DomainError("need 0 < u_lo <= u_up")
        for name in ("eta_comp", "eta_pump", "eta_tc"):
            if not 0 < getattr(self, name) <= 1:
                raise DomainError(f"{name} must lie in (0, 1]")
        if self.retentate_flow <= 0 or not 0 < self.x_retentate < self.x_feed:
            raise DomainError("targets imply a non-physical retentate product")

    @classmethod
    def gas(cls, n_stages, feed_flow, x_feed, y_target, recovery, selectivity,
            r_lo=1.1, r_up=9.0, temperature=303.15, eta_comp=0.75):
        mix = MixtureSpec(Phase.GAS, selectivity, temperature=temperature)
        return cls(n_stages, feed_flow, x_feed, y_target, recovery, mix,
                   math.log(r_lo), math.log(r_up), eta_comp=eta_comp)

    @classmethod
    def liquid(cls, n_stages, feed_flow, x_feed, y_target, recovery, selectivity,
               v_a, v_b, dp_lo_bar=30.0, dp_up_bar=107.0, temperature=303.15,
               eta_pump=0.75, eta_tc=0.80):
        mix = MixtureSpec(Phase.LIQUID, selectivity, v_a, v_b, temperature)
        return cls(n_stages, feed_flow, x_feed, y_target, recovery, mix,
                   dp_lo_bar * 1e5, dp_up_bar * 1e5, eta_pump=eta_pump, eta_tc=eta_tc)

    @staticmethod
    def recovery_from_flow(feed_flow, x_feed, permeate_flow, y_target):
        return permeate_flow * y_target / (feed_flow * x_feed)

    @property
    def permeate_flow(self) -> float:
        return self.recovery * self.feed_flow * self.x_feed / self.y_target

    @property
    def retentate_flow(self) -> float:
        return self.feed_flow - self.permeate_flow

    @property
    def x_retentate(self) -> float:
        return (self.feed_flow * self.x_feed - self.permeate_flow * self.y_target) / self.retentate_flow

    @property
    def is_gas(self) -> bool:
        return self.mixture.phase is Phase.GAS

    def k_at(self, u: float) -> float:
        m = self.mixture
        return k_kernel(m.selectivity, m.c_a, m.c_b, u)

    def replace(self, **changes) -> "ProblemSpec":
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return ProblemSpec(**fields)

    def check_admissible(self) -> None:
        check_admissible(self.mixture, self.u_lo, self.u_up)


# ---------------------------------------------------------------------------
# simulation kernel
# ---------------------------------------------------------------------------

SIM_OK = 0
SIM_SINGULAR = 1
SIM_FLOW_CAP = 2
SIM_NO_CONVERGENCE = 3
SIM_STAGE_FAILURE = 4


@njit(cache=True)
def _stage_flows(n, feed_stage, routes, ret_route, thetas, feed_flow):
    """Inlet flows from the linear overall balances (flows do not depend on compositions)."""
    a = np.eye(n)
    b = np.zeros(n)
    b[feed_stage] = feed_flow
    for j in range(n):
        if j <= n - 3 or (j == n - 2 and ret_route == 0):
            a[j + 1, j] -= 1.0 - thetas[j]
        if routes[j] == 0:
            a[j - 1, j] -= thetas[j]
        elif routes[j] == 1:
            a[j - 2, j] -= thetas[j]
    return _solve_dense(a, b)


@njit(cache=True)
def _solve_dense(a, b):
    """Gaussian elimination with partial pivoting; NaNs when a pivot vanishes."""
    n = b.shape[0]
    a = a.copy()
    x = b.copy()
    for c in range(n):
        p = c
        for r in range(c + 1, n):
            if abs(a[r, c]) > abs(a[p, c]):
                p = r
        if abs(a[p, c]) < 1e-13:
            x[:] = np.nan
            return x
        if p != c:
            for k in range(n):
                a[c, k], a[p, k] = a[p, k], a[c, k]
            x[c], x[p] = x[p], x[c]
        for r in range(c + 1, n):
            m = a[r, c] / a[c, c]
            if m != 0.0:
                for k in range(c, n):
                    a[r, k] -= m * a[c, k]
                x[r] -= m * x[c]
    for c in range(n - 1, -1, -1):
        acc = x[c]
        for k in range(c + 1, n):
            acc -= a[c, k] * x[k]
        x[c] = acc / a[c, c]
    return x


@njit(cache=True)
def _sweep(n, feed_stage, routes, ret_route, feed_flow, x_feed, big_k, s, thetas,
           f_in, f_ret, f_per, recycles, tear, x_in, x_out, y_in, y_out, y_per):
    """One Gauss-Seidel pass over the stages at fixed recycle (tear) compositions.

    Returns the index of a failing stage, or -1.
    """
    for j in range(n):
        if f_in[j] == 0.0:
            continue
        flow_a = 0.0
        if j == feed_stage:
            flow_a += feed_flow * x_feed
        if j >= 1 and (j - 1 <= n - 3 or (j - 1 == n - 2 and ret_route == 0)) and f_ret[j - 1] > 0.0:
            flow_a += f_ret[j - 1] * x_out[j - 1]
        if j + 1 < n and routes[j + 1] == 0 and recycles[j + 1]:
            flow_a += f_per[j + 1] * tear[j + 1]
        if j + 2 < n and routes[j + 2] == 1 and recycles[j + 2]:
            flow_a += f_per[j + 2] * tear[j + 2]
        xi = min(flow_a / f_in[j], 1.0 - 1e-15)
        x_in[j] = xi
        xo, yi, yo, yp, st = crossflow_kernel(xi, thetas[j], big_k, s)
        if st != 0:
            return j
        x_out[j] = xo
        y_in[j] = yi
        y_out[j] = yo
        y_per[j] = yp
    return -1


@njit(cache=True)
def _tear_error(recycles, tear, y_per):
    err = 0.0
    for j in range(tear.shape[0]):
        if recycles[j]:
            err = max(err, abs(y_per[j] - tear[j]) / max(abs(y_per[j]), 1e-300))
    return err


@njit(cache=True)
def simulate_kernel(n, feed_stage, routes, ret_route, feed_flow, x_feed,
                    big_k, s, thetas, tol, max_sweeps, flow_cap, tear0=None):
    """Sequential-modular solve of the cascade at fixed (u, thetas).

    Flows follow from the linear overall balances.  Recycled permeate
    compositions are torn and iterated by Wegstein-accelerated substitution;
    after ``WEGSTEIN_SWEEPS`` sweeps the tears switch to Newton steps with a
    finite-difference Jacobian, falling back to Wegstein if a step fails.
    ``tear0`` optionally warm-starts the tears (finite entries in (0, 1)
    are used) and then Newton steps begin immediately.
    Stage indices are 0-based.  Returns
    (status, sweeps, bad_stage, f_in, x_in, x_out, y_in, y_out, y_per).
    """
    nan = math.nan
    x_in = np.full(n, nan)
    x_out = np.full(n, nan)
    y_in = np.full(n, nan)
    y_out = np.full(n, nan)
    y_per = np.full(n, nan)
    f_in = _stage_flows(n, feed_stage, routes, ret_route, thetas, feed_flow)
    for j in range(n):
        if not (f_in[j] > -1e-9 * feed_flow):
            return SIM_SINGULAR, 0, j, f_in, x_in, x_out, y_in, y_out, y_per
        if f_in[j] > flow_cap * feed_flow:
            return SIM_FLOW_CAP, 0, j, f_in, x_in, x_out, y_in, y_out, y_per
        if f_in[j] < 1e-12 * feed_flow:
            f_in[j] = 0.0
    f_per = thetas * f_in
    f_ret = f_in - f_per
    recycles = np.zeros(n, dtype=np.bool_)
    m = 0
    for j in range(n):
        recycles[j] = routes[j] <= 1 and f_per[j] > 0.0
        if recycles[j]:
            m += 1
    idx = np.empty(m, dtype=np.int64)
    m = 0
    for j in range(n):
        if recycles[j]:
            idx[m] = j
            m += 1

    tear = np.full(n, x_feed)
    newton = False
    if tear0 is not None:
        for j in range(n):
            if recycles[j] and 0.0 < tear0[j] < 1.0:
                tear[j] = tear0[j]
                newton = True
    tear_prev = np.zeros(n)
    g_prev = np.zeros(n)
    sweeps = 0
    while sweeps < max_sweeps:
        bad = _sweep(n, feed_stage, routes, ret_route, feed_flow, x_feed, big_k, s, thetas,
                     f_in, f_ret, f_per, recycles, tear, x_in, x_out, y_in, y_out, y_per)
        sweeps += 1
        if bad >= 0:
            return SIM_STAGE_FAILURE, sweeps, bad, f_in, x_in, x_out, y_in, y_out, y_per
        if _tear_error(recycles, tear, y_per) <= tol:
            return SIM_OK, sweeps, -1, f_in, x_in, x_out, y_in, y_out, y_per
        if newton and m > 0 and sweeps + m + 1 < max_sweeps:
            # Newton step on r(t) = g(t) - t with a forward-difference Jacobian
            r0 = np.empty(m)
            for a in range(m):
                r0[a] = y_per[idx[a]] - tear[idx[a]]
            jac = np.empty((m, m))
            ok = True
            tmp_in = x_in.copy()
            tmp_out = x_out.copy()
            tmp_yi = y_in.copy()
            tmp_yo = y_out.copy()
            tmp_yp = y_per.copy()
            for b in range(m):
                h = 1e-7 * max(tear[idx[b]], 1e-3)
                if tear[idx[b]] + h >= 1.0:
                    h = -h
                tear[idx[b]] += h
                bad = _sweep(n, feed_stage, routes, ret_route, feed_flow, x_feed, big_k, s,
                             thetas, f_in, f_ret, f_per, recycles, tear,
                             tmp_in, tmp_out, tmp_yi, tmp_yo, tmp_yp)
                sweeps += 1
                tear[idx[b]] -= h
                if bad >= 0:
                    ok = False
                    break
                for a in range(m):
                    jac[a, b] = ((tmp_yp[idx[a]] - tear[idx[a]]) - r0[a]) / h
                # the perturbed tear itself enters r with slope -1
                jac[b, b] -= 1.0
            if ok:
                step = _solve_dense(jac, -r0) if np.isfinite(jac).all() else np.full(m, nan)
                if np.isfinite(step).all():
                    lam = 1.0
                    for a in range(m):
                        t_new = tear[idx[a]] + step[a]
                        if t_new <= 0.0:
                            lam = min(lam, 0.5 * tear[idx[a]] / -step[a])
                        elif t_new >= 1.0:
                            lam = min(lam, 0.5 * (1.0 - tear[idx[a]]) / step[a])
                    for a in range(m):
                        tear[idx[a]] += lam * step[a]
                    continue
            newton = False
        # Wegstein update of each tear
        for j in range(n):
            if not recycles[j]:
                continue
            g = y_per[j]
            new = g
            if sweeps > 1:
                dx = tear[j] - tear_prev[j]
                if dx != 0.0:
                    slope = (g - g_prev[j]) / dx
                    q = slope / (slope - 1.0) if slope != 1.0 else -5.0
                    q = min(max(q, -5.0), 0.0)
                    new = q * tear[j] + (1.0 - q) * g
            tear_prev[j] = tear[j]
            g_prev[j] = g
            if new <= 0.0:
                new = 0.5 * tear[j]
            elif new >= 1.0:
                new = 0.5 * (1.0 + tear[j])
            tear[j] = new
        if sweeps >= WEGSTEIN_SWEEPS:
            newton = True
    return SIM_NO_CONVERGENCE, sweeps, -1, f_in, x_in, x_out, y_in, y_out, y_per


# ---------------------------------------------------------------------------
# state and public API
# ---------------------------------------------------------------------------

@dataclass
class CascadeState:
    """Converged flows and compositions of one cascade simulation.

    Per-stage arrays are indexed 0..N-1 (stage j lives at index j-1).
    Compositions of stages that carry no flow are NaN.
    """

    config: Configuration
    u: float
    k: float
    thetas: np.ndarray
    f_in: np.ndarray
    f_out: np.ndarray
    f_per: np.ndarray
    x_in: np.ndarray
    x_out: np.ndarray
    y_in: np.ndarray
    y_out: np.ndarray
    y_per: np.ndarray
    f_feed: np.ndarray
    f_recy1: np.ndarray
    f_recy2: np.ndarray
    f_per_bypass: np.ndarray
    f_out_bypass: np.ndarray
    f_out1: float
    permeate_flow: float
    permeate_purity: float
    retentate_flow: float
    retentate_purity: float
    sweeps: int = 0
    recovery: float = field(default=float("nan"))

    @property
    def n_stages(self) -> int:
        return self.config.n_stages

    def carries_flow(self, j: int) -> bool:
        return self.f_in[j - 1] > 0.0

    def stage(self, j: int) -> PermeationResult | None:
        i = j - 1
        if not self.carries_flow(j):
            return None
        return PermeationResult(self.x_in[i], self.x_out[i], self.y_in[i], self.y_out[i],
                                self.y_per[i], self.y_in[i] - self.x_in[i],
                                self.y_out[i] - self.x_out[i], self.thetas[i], self.k)

    def recycle_flow(self) -> float:
        return float(self.f_recy1.sum() + self.f_recy2.sum())


def _route_arrays(config):
    routes = np.array([int(r) for r in config.permeate_routes], dtype=np.int64)
    return routes, int(config.retentate_route)


def _validate_thetas(config, thetas):
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape != (config.n_stages,):
        raise DomainError(f"expected {config.n_stages} stage cuts, got shape {thetas.shape}")
    if np.any(thetas < 0) or np.any(thetas > 1 - EPS_THETA + 1e-12):
        raise DomainError("stage cuts must lie in [0, 1 - eps_theta]")
    for j in range(1, config.n_stages + 1):
        if config.is_inactive(j) and thetas[j - 1] != 0.0:
            raise DomainError(f"stage {j} is inactive but has stage cut {thetas[j - 1]}")
    return thetas


def _arc_name(config, j):
    target = config.permeate_target(j)
    if target is None:
        return f"stage {j}"
    return f"S{j}->M{target} ({config.route(j).name})"


def simulate(spec: ProblemSpec, config: Configuration, u: float, thetas,
             tol: float = RECYCLE_TOL, max_sweeps: int = MAX_SWEEPS) -> CascadeState:
    """Converge the cascade at a fixed operating point.

    Product purity and recovery are not imposed here; the returned state
    reports whatever the operating point delivers.
    """
    thetas = _validate_thetas(config, thetas)
    if not spec.u_lo * (1 - 1e-12) <= u <= spec.u_up * (1 + 1e-12):
        raise DomainError(f"u = {u} outside [{spec.u_lo}, {spec.u_up}]")
    s = spec.mixture.selectivity
    k = spec.k_at(u)
    routes, ret = _route_arrays(config)
    out = simulate_kernel(config.n_stages, config.feed_stage - 1, routes, ret,
                          spec.feed_flow, spec.x_feed, k * (s - 1) ** 2, s, thetas,
                          tol, max_sweeps, FLOW_CAP)
    status, sweeps, bad = out[0], out[1], out[2]
    if status != SIM_OK:
        reasons = {SIM_SINGULAR: "flow balance is singular or negative",
                   SIM_FLOW_CAP: f"stage flow exceeds {FLOW_CAP:g} x feed",
                   SIM_NO_CONVERGENCE: f"recycle compositions not converged after {max_sweeps} sweeps",
                   SIM_STAGE_FAILURE: "a stage solve failed"}
        arc = _arc_name(config, bad + 1) if bad >= 0 else None
        raise RecycleDivergence(reasons[status] + (f" at {arc}" if arc else ""), arc=arc)
    return build_state(spec, config, u, k, thetas, out[3:], sweeps)


def build_state(spec, config, u, k, thetas, arrays, sweeps=0) -> CascadeState:
    f_in, x_in, x_out, y_in, y_out, y_per = (np.array(a) for a in arrays)
    n = config.n_stages
    f_per = thetas * f_in
    f_out = f_in - f_per
    f_feed = np.zeros(n)
    f_feed[config.feed_stage - 1] = spec.feed_flow
    f_recy1 = np.zeros(n)
    f_recy2 = np.zeros(n)
    f_per_bypass = np.zeros(n)
    f_out_bypass = np.zeros(n)
    f_out1 = 0.0
    for j in range(1, n + 1):
        i = j - 1
        route = config.route(j)
        if route is Route.RECY1:
            f_recy1[i] = f_per[i]
        elif route is Route.RECY2:
            f_recy2[i] = f_per[i]
        elif route is Route.BYPASS:
            f_per_bypass[i] = f_per[i]
        if config.retentate_target(j) is None:
            f_out_bypass[i] = f_out[i]
        elif j == n - 1:
            f_out1 = f_out[i]
    perm_flow = f_per_bypass.sum()
    perm_a = sum(f_per_bypass[i] * y_per[i] for i in range(n) if f_per_bypass[i] > 0)
    ret_flow = f_out_bypass.sum()
    ret_a = sum(f_out_bypass[i] * x_out[i] for i in range(n) if f_out_bypass[i] > 0)
    perm_purity = perm_a / perm_flow if perm_flow > 0 else float("nan")
    ret_purity = ret_a / ret_flow if ret_flow > 0 else float("nan")
    recovery = perm_a / (spec.feed_flow * spec.x_feed)
    return CascadeState(config, float(u), float(k), thetas.copy(), f_in, f_out, f_per,
                        x_in, x_out, y_in, y_out, y_per, f_feed, f_recy1, f_recy2,
                        f_per_bypass, f_out_bypass, float(f_out1), float(perm_flow),
                        float(perm_purity), float(ret_flow), float(ret_purity),
                        int(sweeps), float(recovery))


@dataclass(frozen=True)
class ObjectiveCoefficients:
    d0: float
    d1: float
    d_stage: np.ndarray  # D_j for j = 2..N, stored at index j-1 (index 0 unused)
    d_last: float


def objective_coefficients(spec: ProblemSpec, state: CascadeState) -> ObjectiveCoefficients:
    n = spec.n_stages if state is None else state.n_stages
    m = spec.mixture
    if spec.is_gas:
        c = m.r_gas * m.temperature / spec.eta_comp
        return ObjectiveCoefficients(0.0, c, np.full(n, c), 0.0)
    v_feed = m.v_a * spec.x_feed + m.v_b * (1 - spec.x_feed)
    x_ret = state.retentate_purity if state.retentate_flow > 0 else spec.x_retentate
    v_out = m.v_a * x_ret + m.v_b * (1 - x_ret)
    y = np.nan_to_num(state.y_per)
    d_stage = (m.v_a * y + m.v_b * (1 - y)) / spec.eta_pump
    return ObjectiveCoefficients(v_feed * spec.feed_flow / spec.eta_pump, 0.0, d_stage,
                                 -v_out * spec.eta_tc / spec.eta_pump)


def power(spec: ProblemSpec, state: CascadeState) -> float:
    """Net power (W) of a converged cascade at its pressure variable."""
    d = objective_coefficients(spec, state)
    u = state.u
    total = d.d0 * u + d.d1 * state.permeate_flow * u
    total += float(np.dot(d.d_stage[1:], state.f_recy1[1:])) * u
    total += float(np.dot(d.d_stage[2:], state.f_recy2[2:])) * u
    total += d.d_last * state.retentate_flow * u
    return total


def stage_count(state: CascadeState) -> int:
    """Stages that carry flow and separate (nonzero stage cut)."""
    return int(np.sum((state.f_in > 0) & (state.thetas > 0)))


# ---------------------------------------------------------------------------
# fast evaluation for the optimizer
# ---------------------------------------------------------------------------

@njit(cache=True)
def _power_kernel(n, routes, ret_route, thetas, f_in, y_per, perm_flow, ret_flow, ret_purity,
                  u, is_gas, d_gas, v_a, v_b, feed_flow, x_feed, eta_pump, eta_tc):
    recy = 0.0
    recy_vol = 0.0
    for j in range(1, n):
        if routes[j] <= 1 and f_in[j] > 0.0:
            fp = thetas[j] * f_in[j]
            recy += fp
            recy_vol += fp * (v_a * y_per[j] + v_b * (1.0 - y_per[j]))
    if is_gas:
        return d_gas * (recy + perm_flow) * u
    v_feed = v_a * x_feed + v_b * (1.0 - x_feed)
    v_out = v_a * ret_purity + v_b * (1.0 - ret_purity)
    return (feed_flow * v_feed * u - eta_tc * ret_flow * v_out * u + recy_vol * u) / eta_pump


@njit(cache=True)
def products_kernel(n, routes, ret_route, thetas, f_in, x_out, y_per):
    """Permeate and retentate product (flow, purity) assembled at mixers P and R."""
    perm_flow = 0.0
    perm_a = 0.0
    for j in range(min(n, 2)):
        if routes[j] == 2 and f_in[j] > 0.0:
            fp = thetas[j] * f_in[j]
            perm_flow += fp
            if fp > 0.0:
                perm_a += fp * y_per[j]
    ret_flow = 0.0
    ret_a = 0.0
    for j in range(max(n - 2, 0), n):
        to_product = j == n - 1 or ret_route == 1
        if to_product and f_in[j] > 0.0:
            fo = (1.0 - thetas[j]) * f_in[j]
            ret_flow += fo
            if fo > 0.0:
                ret_a += fo * x_out[j]
    perm_purity = perm_a / perm_flow if perm_flow > 0.0 else 0.0
    ret_purity = ret_a / ret_flow if ret_flow > 0.0 else 0.0
    return perm_flow, perm_purity, ret_flow, ret_purity


@njit(cache=True)
def cut_violation_kernel(f_in, x_in, x_out, y_in, y_out, y_per, y_target, x_retentate, use_p5):
    """Largest violation of the stage-wise and P5-derived cuts (0 when all hold).

    Stages without flow are skipped; monotonicity is checked along the chain
    of stages that carry flow.
    """
    n = f_in.shape[0]
    worst = 0.0
    prev = -1
    first = -1
    last = -1
    for j in range(n):
        if not f_in[j] > 0.0:
            continue
        worst = max(worst, x_out[j] - x_in[j], x_in[j] - y_per[j],
                    y_out[j] - y_per[j], y_per[j] - y_in[j])
        if use_p5 and prev >= 0:
            worst = max(worst, x_in[j] - x_in[prev], x_out[j] - x_out[prev],
                        y_per[j] - y_per[prev], y_in[j] - y_in[prev], y_out[j] - y_out[prev])
        if first < 0:
            first = j
        last = j
        prev = j
    if use_p5:
        if first == 0:
            worst = max(worst, y_target - y_per[0])
        if last == n - 1:
            worst = max(worst, x_out[n - 1] - x_retentate)
    return worst


@njit(cache=True)
def evaluate_kernel(n, feed_stage, routes, ret_route, feed_flow, x_feed, big_k, s, thetas,
                    u, is_gas, d_gas, v_a, v_b, eta_pump, eta_tc, y_target, x_retentate,
                    use_p5, tol, max_sweeps, flow_cap, tear0):
    """Simulate and return (status, power, perm_flow, perm_purity, cut_violation, y_per)."""
    out = simulate_kernel(n, feed_stage, routes, ret_route, feed_flow, x_feed, big_k, s,
                          thetas, tol, max_sweeps, flow_cap, tear0)
    status = out[0]
    if status != SIM_OK:
        return status, math.nan, math.nan, math.nan, math.nan, out[8]
    f_in, x_in, x_out, y_in, y_out, y_per = out[3], out[4], out[5], out[6], out[7], out[8]
    perm_flow, perm_purity, ret_flow, ret_purity = products_kernel(n, routes, ret_route, thetas,
                                                                  f_in, x_out, y_per)
    p = _power_kernel(n, routes, ret_route, thetas, f_in, y_per, perm_flow, ret_flow, ret_purity,
                      u, is_gas, d_gas, v_a, v_b, feed_flow, x_feed, eta_pump, eta_tc)
    viol = cut_violation_kernel(f_in, x_in, x_out, y_in, y_out, y_per, y_target, x_retentate, use_p5)
    return SIM_OK, p, perm_flow, perm_purity, viol, y_per

"""Variable bounds, validity cuts and machine-count limits.

Bounds are used to sanity-check converged states; cuts act as pruning
predicates during search and as certificates on reported optima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cascade import CascadeState, Configuration, ProblemSpec, count_pressure_machines
from .errors import DomainError
from .permeator import EPS_THETA, EPS_X, flux_gap, permeate_y, retentate_x

CUT_TOL = 1e-7


@dataclass(frozen=True)
class Interval:
    lo: float
    up: float

    def __post_init__(self):
        if not self.lo <= self.up:
            raise DomainError(f"empty interval [{self.lo}, {self.up}]")

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= value <= self.up + tol


@dataclass(frozen=True)
class StageBounds:
    x_in: Interval
    x_out: Interval
    y_in: Interval
    y_out: Interval
    y_per: Interval
    z_in: Interval
    z_out: Interval
    theta: Interval


@dataclass(frozen=True)
class VariableBounds:
    """Per-stage composition intervals plus global u and k intervals."""

    u: Interval
    k: Interval
    stages: tuple[StageBounds, ...]

    def stage(self, j: int) -> StageBounds:
        return self.stages[j - 1]


def critical_y(s: float) -> float:
    """Local permeate fraction at which z(y) = y - x peaks."""
    return (s - math.sqrt(s)) / (s - 1.0)


def z_lower(y_lo: float, y_up: float, big_k_lo: float, s: float) -> float:
    # z is concave in y with zeros at 0 and 1, so the minimum sits at an end
    return min(flux_gap(y_lo, big_k_lo, s), flux_gap(y_up, big_k_lo, s))


def z_upper(y_lo: float, y_up: float, big_k_up: float, s: float) -> float:
    y_star = critical_y(s)
    if y_up <= y_star:
        return flux_gap(y_up, big_k_up, s)
    if y_lo >= y_star:
        return flux_gap(y_lo, big_k_up, s)
    k_up = big_k_up / (s - 1.0) ** 2
    return k_up * (math.sqrt(s) - 1.0) ** 2


def derive_bounds(spec: ProblemSpec) -> VariableBounds:
    spec.check_admissible()
    s = spec.mixture.selectivity
    k_lo, k_up = spec.k_at(spec.u_lo), spec.k_at(spec.u_up)
    big_lo, big_up = k_lo * (s - 1) ** 2, k_up * (s - 1) ** 2
    n = spec.n_stages
    x_out_prod, y_prod = spec.x_retentate, spec.y_target

    x_in = Interval(x_out_prod, y_prod)
    y_in = Interval(permeate_y(x_in.lo, big_lo, s), permeate_y(x_in.up, big_up, s))
    stages = []
    for j in range(1, n + 1):
        x_out_lo = x_out_prod if j < n else EPS_X
        y_per_lo = permeate_y(x_out_lo, big_lo, s)
        y_per_up = y_in.up if j == 1 else y_prod
        x_out = Interval(x_out_lo, retentate_x(y_per_up, big_lo, s))
        y_out = Interval(y_per_lo, y_per_up)
        stages.append(StageBounds(
            x_in=x_in,
            x_out=x_out,
            y_in=y_in,
            y_out=y_out,
            y_per=Interval(y_per_lo, y_per_up),
            z_in=Interval(z_lower(y_in.lo, y_in.up, big_lo, s), z_upper(y_in.lo, y_in.up, big_up, s)),
            z_out=Interval(z_lower(y_out.lo, y_out.up, big_lo, s), z_upper(y_out.lo, y_out.up, big_up, s)),
            theta=Interval(0.0, 1.0 - EPS_THETA),
        ))
    return VariableBounds(Interval(spec.u_lo, spec.u_up), Interval(k_lo, k_up), tuple(stages))


def bound_violations(state: CascadeState, bounds: VariableBounds, tol: float = 1e-9) -> list[tuple[str, int, float]]:
    """Variables of ``state`` lying outside ``bounds``: (name, stage, excess)."""
    out = []
    if not bounds.u.contains(state.u, tol * max(1.0, abs(state.u))):
        out.append(("u", 0, state.u))
    if not bounds.k.contains(state.k, tol):
        out.append(("k", 0, state.k))
    for j in range(1, state.n_stages + 1):
        if not state.carries_flow(j):
            continue
        i = j - 1
        sb = bounds.stage(j)
        values = {"x_in": state.x_in[i], "x_out": state.x_out[i], "y_in": state.y_in[i],
                  "y_out": state.y_out[i], "y_per": state.y_per[i],
                  "z_in": state.y_in[i] - state.x_in[i], "z_out": state.y_out[i] - state.x_out[i],
                  "theta": state.thetas[i]}
        for name, value in values.items():
            iv = getattr(sb, name)
            if not iv.contains(value, tol):
                out.append((name, j, max(iv.lo - value, value - iv.up)))
    return out


@dataclass(frozen=True)
class CutViolation:
    cut: str
    stage: int
    magnitude: float


@dataclass(frozen=True)
class CutReport:
    violations: tuple[CutViolation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def worst(self) -> float:
        return max((v.magnitude for v in self.violations), default=0.0)

    def __str__(self):
        if self.ok:
            return "all cuts satisfied"
        return "; ".join(f"{v.cut}[{v.stage}] by {v.magnitude:.3g}" for v in self.violations)


def check_cuts(state: CascadeState, spec: ProblemSpec, use_p5: bool = True,
               tol: float = CUT_TOL) -> CutReport:
    """Evaluate the stage and cascade cuts on a converged state.

    Stage cuts (retentate <= feed <= permeate; exit <= mixed <= entrance
    permeate) always apply.  With ``use_p5`` the stage-to-stage decrease of
    compositions and the two product-end cuts are checked as well.  Stages
    without flow are skipped and monotonicity runs along the remaining chain.
    """
    found = []

    def flag(name, j, amount):
        if amount > tol:
            found.append(CutViolation(name, j, float(amount)))

    live = [j for j in range(1, state.n_stages + 1) if state.carries_flow(j)]
    for j in live:
        i = j - 1
        flag("x_out<=x_in", j, state.x_out[i] - state.x_in[i])
        flag("x_in<=y_per", j, state.x_in[i] - state.y_per[i])
        flag("y_out<=y_per", j, state.y_out[i] - state.y_per[i])
        flag("y_per<=y_in", j, state.y_per[i] - state.y_in[i])
    if use_p5:
        for prev, j in zip(live, live[1:]):
            for name in ("x_in", "x_out", "y_per", "y_in", "y_out"):
                arr = getattr(state, name)
                flag(f"{name} decreasing", j, arr[j - 1] - arr[prev - 1])
        if live and live[0] == 1:
            flag("Y_per<=y_per[1]", 1, spec.y_target - state.y_per[0])
        n = state.n_stages
        if live and live[-1] == n:
            flag("x_out[N]<=X_out", n, state.x_out[n - 1] - spec.x_retentate)
    return CutReport(tuple(found))


def machine_limit_filter(config: Configuration, machines: int) -> bool:
    """True when the configuration needs at most ``machines`` intermediate machines."""
    if machines < 0:
        raise DomainError("machine limit must be non-negative")
    return count_pressure_machines(config) <= machines

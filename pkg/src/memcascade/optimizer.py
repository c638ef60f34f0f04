"""Global design search over the cascade superstructure.

The discrete routing space is enumerated exactly.  For each configuration
the continuous space (u and the stage cuts of active stages) is searched by
deterministic space-filling sampling under an exact penalty, followed by
constrained local refinement from the best distinct samples and a Newton
restoration of the two product specifications.

The reported gap is a sampling-coverage estimate (best design versus the
lowest power seen among near-feasible samples), not a relaxation bound.
"""

from __future__ import annotations

import enum
import itertools
import math
import os
import time
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .bounds_cuts import CutReport, check_cuts, machine_limit_filter
from .cascade import (
    FLOW_CAP,
    MAX_SWEEPS,
    RECYCLE_TOL,
    SIM_OK,
    CascadeState,
    Configuration,
    ProblemSpec,
    Route,
    count_pressure_machines,
    enumerate_configurations,
    evaluate_kernel,
    simulate,
    stage_count,
)
from .errors import AdmissibilityError, AllInfeasible, Infeasible, MembraneError
from .permeator import EPS_THETA

THREADS_ENV = "MEMCASCADE_THREADS"
THETA_UP = 1.0 - EPS_THETA


@dataclass(frozen=True)
class SearchSettings:
    """Knobs of the per-configuration search.

    ``grid`` points per dimension define the coarse sample; when the full
    grid exceeds ``max_samples`` a scrambled Sobol set of that size is used
    instead.  Local refinement stops after ``patience`` consecutive starts
    without improving the configuration's best power by ``refine_tol``.
    """

    starts: int = 64
    grid: int = 9
    max_samples: int = 1024
    patience: int = 8
    refine_tol: float = 1e-6
    tol_purity: float = 1e-4
    tol_recovery: float = 1e-4
    penalty: float = 1e6
    penalty_doublings: int = 2
    use_p5: bool = True
    seed: int = 0
    workers: int = 1
    eps_r: float = 0.05
    local_maxiter: int = 300
    start_point: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.grid < 3:
            raise ValueError("grid resolution must be at least 3")
        if self.starts < 1 or self.max_samples < 0 or self.patience < 1:
            raise ValueError("starts and patience must be positive")
        for name in ("tol_purity", "tol_recovery", "refine_tol", "penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.eps_r < 1:
            raise ValueError("eps_r must lie in (0, 1)")

    @classmethod
    def from_env(cls, **overrides) -> "SearchSettings":
        workers = int(os.environ.get(THREADS_ENV, "1") or 1)
        overrides.setdefault("workers", max(1, workers))
        return cls(**overrides)

    def local_only(self, start_point) -> "SearchSettings":
        """Single-start local refinement from ``start_point`` (no sampling)."""
        return replace(self, starts=1, max_samples=0, start_point=tuple(float(v) for v in start_point))


@dataclass(frozen=True)
class OperatingPoint:
    u: float
    thetas: tuple[float, ...]


@dataclass
class ConfigurationResult:
    config: Configuration
    point: OperatingPoint | None
    power: float
    machines: int
    active_stages: int
    evaluations: int
    local_runs: int
    gap: float
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.point is not None

    def sort_key(self):
        return (self.power if self.feasible else math.inf, self.machines,
                self.active_stages, self.config.encode())


@dataclass
class OptimizationReport:
    """Outcome of a design search."""

    config: Configuration
    point: OperatingPoint
    power: float
    state: CascadeState
    cuts: CutReport
    gap: float
    wall_time: float
    table: list[ConfigurationResult] = field(default_factory=list)

    @property
    def machines(self) -> int:
        return count_pressure_machines(self.config)

    @property
    def active_stages(self) -> int:
        return stage_count(self.state)

    def summary(self) -> str:
        lines = [
            f"configuration     {self.config.encode()}",
            f"power_kW          {self.power / 1e3:.6f}",
            f"u                 {self.point.u!r}",
            "thetas            " + " ".join(repr(t) for t in self.point.thetas),
            f"machines          {self.machines}",
            f"active_stages     {self.active_stages}",
            f"permeate          {self.state.permeate_flow!r} mol/s at {self.state.permeate_purity!r}",
            f"retentate         {self.state.retentate_flow!r} mol/s at {self.state.retentate_purity!r}",
            f"coverage_gap      {self.gap!r}",
            f"cuts              {self.cuts}",
            f"configurations    {len(self.table)} searched, "
            f"{sum(r.feasible for r in self.table)} feasible",
        ]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# evaluation in scaled coordinates
# ---------------------------------------------------------------------------

class _Problem:
    """Scaled reduced-space view of one configuration.

    Decision vector v = (s_u, theta_a1, theta_a2, ...) with s_u in [0, 1]
    mapping linearly to [u_lo, u_up] and thetas of the active stages only.
    """

    def __init__(self, spec: ProblemSpec, config: Configuration, use_p5: bool):
        self.spec = spec
        self.config = config
        self.use_p5 = use_p5
        self.n = config.n_stages
        self.routes = np.array([int(r) for r in config.permeate_routes], dtype=np.int64)
        self.feed = config.feed_stage - 1
        self.ret = int(config.retentate_route)
        reach = config.reachable()
        self.active = [j for j in range(self.n) if reach[j] and not config.is_inactive(j + 1)]
        m = spec.mixture
        self.s = m.selectivity
        self.c_a, self.c_b = m.c_a, m.c_b
        self.d_gas = m.r_gas * m.temperature / spec.eta_comp
        self.dim = 1 + len(self.active)
        if spec.is_gas:
            self.p_ref = self.d_gas * spec.feed_flow * spec.u_up
        else:
            v_f = m.v_a * spec.x_feed + m.v_b * (1 - spec.x_feed)
            self.p_ref = v_f * spec.feed_flow * spec.u_up / spec.eta_pump
        self.evaluations = 0
        self._cache_key = None
        self._cache_val = None
        self._warm = np.full(self.n, math.nan)

    def u_of(self, su):
        su = min(max(su, 0.0), 1.0)
        return self.spec.u_lo + su * (self.spec.u_up - self.spec.u_lo)

    def thetas_of(self, v):
        th = np.zeros(self.n)
        for a, j in enumerate(self.active):
            th[j] = min(max(v[1 + a], 0.0), THETA_UP)
        return th

    def point_of(self, v) -> OperatingPoint:
        return OperatingPoint(float(self.u_of(v[0])), tuple(float(t) for t in self.thetas_of(v)))

    def evaluate(self, v):
        """(ok, power_W, purity_residual, flow_residual_scaled, cut_violation)."""
        key = tuple(float(x) for x in v)
        if key == self._cache_key:
            return self._cache_val
        self.evaluations += 1
        spec = self.spec
        u = self.u_of(key[0])
        th = self.thetas_of(key)
        big_k = ((-self.s * math.expm1(-self.c_a * u) + math.expm1(-self.c_b * u)))
        m = spec.mixture
        out = evaluate_kernel(self.n, self.feed, self.routes, self.ret, spec.feed_flow, spec.x_feed,
                              big_k, self.s, th, u, spec.is_gas, self.d_gas, m.v_a, m.v_b,
                              spec.eta_pump, spec.eta_tc, spec.y_target, spec.x_retentate,
                              self.use_p5, RECYCLE_TOL, MAX_SWEEPS, FLOW_CAP, self._warm)
        status, p, flow, purity, viol, y_per = out
        if status != SIM_OK or not math.isfinite(p):
            val = (False, math.nan, math.nan, math.nan, math.nan)
        else:
            self._warm = y_per
            val = (True, p, purity - spec.y_target, (flow - spec.permeate_flow) / spec.feed_flow, viol)
        self._cache_key, self._cache_val = key, val
        return val

    def penalized(self, v, weight):
        ok, p, r1, r2, viol = self.evaluate(v)
        if not ok:
            return math.inf
        # exact penalty: `weight` watts per unit residual
        return p + weight * (abs(r1) + abs(r2) + (viol if self.use_p5 else 0.0))

    def bounds(self):
        return [(0.0, 1.0)] + [(0.0, THETA_UP)] * len(self.active)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _work_seed(seed: int, config: Configuration, salt: str = "") -> int:
    return zlib.crc32(f"{seed}|{config.encode()}|{salt}".encode())


def _samples(prob: _Problem, settings: SearchSettings, round_: int) -> np.ndarray:
    dim = prob.dim
    total = settings.grid ** dim
    if total <= settings.max_samples and round_ == 0:
        axes = [np.linspace(0.0, 1.0, settings.grid)] + \
               [np.linspace(0.0, THETA_UP, settings.grid)] * (dim - 1)
        return np.array(list(itertools.product(*axes)))
    if settings.max_samples == 0:
        return np.empty((0, dim))
    sob = qmc.Sobol(dim, scramble=True, seed=_work_seed(settings.seed, prob.config, f"r{round_}"))
    pts = sob.random_base2(int(math.ceil(math.log2(max(settings.max_samples, 2)))))
    pts = pts[:settings.max_samples]
    pts[:, 1:] *= THETA_UP
    return pts


def _select_starts(points, values, count, min_dist=0.05):
    order = np.argsort(values, kind="stable")
    chosen = []
    for i in order:
        if not math.isfinite(values[i]):
            break
        p = points[i]
        if all(np.max(np.abs(p - points[c])) > min_dist for c in chosen):
            chosen.append(i)
        if len(chosen) >= count:
            break
    return [points[i] for i in chosen]


# ---------------------------------------------------------------------------
# local refinement and restoration
# ---------------------------------------------------------------------------

def _fd_gradients(prob: _Problem, v, h=1.5e-8):
    """Forward differences of (power / p_ref, r1, r2), shared by objective and constraints."""
    ok, p, r1, r2, _ = prob.evaluate(v)
    base = np.array([p / prob.p_ref, r1, r2]) if ok else np.array([1e3, 1.0, 1.0])
    jac = np.zeros((3, len(v)))
    bnds = prob.bounds()
    for i in range(len(v)):
        w = np.array(v, float)
        step = h * max(1.0, abs(w[i]))
        if w[i] + step > bnds[i][1]:
            step = -step
        w[i] += step
        ok, pw, a, b, _ = prob.evaluate(w)
        if ok:
            jac[:, i] = (np.array([pw / prob.p_ref, a, b]) - base) / step
    return jac


def _local_refine(prob: _Problem, v0, settings: SearchSettings):
    cache = {}

    def grads(v):
        key = v.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = _fd_gradients(prob, v)
        return cache[key]

    def obj(v):
        ok, p, *_ = prob.evaluate(v)
        return p / prob.p_ref if ok else 1e3

    def cons(v):
        ok, p, r1, r2, _ = prob.evaluate(v)
        return np.array([r1, r2]) if ok else np.array([1.0, 1.0])

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = minimize(obj, np.asarray(v0, float), method="SLSQP", bounds=prob.bounds(),
                       jac=lambda v: grads(v)[0],
                       constraints=[{"type": "eq", "fun": cons, "jac": lambda v: grads(v)[1:]}],
                       options={"maxiter": settings.local_maxiter, "ftol": 1e-10})
    lo = np.array([b[0] for b in prob.bounds()])
    up = np.array([b[1] for b in prob.bounds()])
    return np.clip(res.x, lo, up)


def _jacobian(prob, v, idx, h=1e-7):
    ok, _, r1, r2, _ = prob.evaluate(v)
    if not ok:
        return None, None
    r0 = np.array([r1, r2])
    jac = np.zeros((2, len(idx)))
    for c, i in enumerate(idx):
        w = np.array(v, float)
        step = h if w[i] + h <= prob.bounds()[i][1] else -h
        w[i] += step
        ok, _, a, b, _ = prob.evaluate(w)
        if not ok:
            return None, None
        jac[:, c] = (np.array([a, b]) - r0) / step
    return r0, jac


def restore(prob: _Problem, v, tol=1e-11, max_iter=30):
    """Newton solve of the two product residuals on two control variables.

    Controls are the pair of active stage cuts whose Jacobian block is best
    conditioned; u is used as a control only when fewer than two stage cuts
    are free.  Returns the restored vector or None.
    """
    v = np.array(v, float)
    bnds = prob.bounds()
    cand = [i for i in range(1, prob.dim) if 1e-9 < v[i] < bnds[i][1] - 1e-9]
    if len(cand) < 2:
        cand = [0] + cand
    if len(cand) < 2:
        return None
    r0, jac = _jacobian(prob, v, cand)
    if r0 is None:
        return None
    pairs = sorted(itertools.combinations(range(len(cand)), 2),
                   key=lambda p: -abs(np.linalg.det(jac[:, list(p)])))
    for pa, pb in pairs[:3]:
        ctrl = [cand[pa], cand[pb]]
        w = v.copy()
        for _ in range(max_iter):
            r, jc = _jacobian(prob, w, ctrl)
            if r is None:
                break
            if abs(r[0]) <= tol and abs(r[1]) <= tol:
                return w
            try:
                step = np.linalg.solve(jc, -r)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            for _ in range(30):
                trial = w.copy()
                trial[ctrl] += lam * step
                trial[ctrl] = np.clip(trial[ctrl], [bnds[c][0] for c in ctrl], [bnds[c][1] for c in ctrl])
                ok, _, a, b, _ = prob.evaluate(trial)
                if ok and max(abs(a), abs(b)) < max(abs(r[0]), abs(r[1])):
                    break
                lam *= 0.5
            else:
                break
            w = trial
    return None


# ---------------------------------------------------------------------------
# per-configuration search
# ---------------------------------------------------------------------------

def _feasible(prob: _Problem, v, settings: SearchSettings, strict=True):
    ok, p, r1, r2, viol = prob.evaluate(v)
    if not ok:
        return False
    spec = prob.spec
    tol_p, tol_r = (1e-9, 1e-9) if strict else (settings.tol_purity, settings.tol_recovery)
    rec_res = r2 * spec.feed_flow * spec.y_target / (spec.feed_flow * spec.x_feed)
    if abs(r1) > tol_p or abs(rec_res) > tol_r:
        return False
    if prob.use_p5 and viol > 1e-7:
        return False
    return True


def _solve_configuration(spec: ProblemSpec, config: Configuration, settings: SearchSettings) -> ConfigurationResult:
    prob = _Problem(spec, config, settings.use_p5)
    machines = count_pressure_machines(config)
    best_v, best_p = None, math.inf
    local_runs = 0
    envelope = math.inf
    weight = settings.penalty
    for round_ in range(settings.penalty_doublings + 1):
        if settings.start_point is not None:
            starts = [np.asarray(settings.start_point, float)]
        else:
            pts = _samples(prob, settings, round_)
            vals = np.array([prob.penalized(p, weight) for p in pts])
            for p in pts:
                ok, pw, r1, r2, viol = prob.evaluate(p)
                if ok and abs(r1) <= 1e-2 and abs(r2) <= 1e-2 and (not prob.use_p5 or viol <= 1e-6):
                    envelope = min(envelope, pw)
            starts = _select_starts(pts, vals, settings.starts)
        stall = 0
        for v0 in starts:
            local_runs += 1
            v = _local_refine(prob, v0, settings)
            w = restore(prob, v) if not _feasible(prob, v, settings) else v
            if w is not None and not _feasible(prob, w, settings):
                w2 = restore(prob, w)
                w = w2 if w2 is not None and _feasible(prob, w2, settings) else None
            improved = False
            if w is not None:
                p = prob.evaluate(w)[1]
                if p < best_p * (1 - settings.refine_tol):
                    improved = True
                if p < best_p:
                    best_v, best_p = w, p
            stall = 0 if improved else stall + 1
            if stall >= settings.patience:
                break
        if best_v is not None or settings.start_point is not None:
            break
        weight *= 2.0
    if best_v is None:
        return ConfigurationResult(config, None, math.inf, machines, 0, prob.evaluations, local_runs,
                                   math.nan, "no spec-feasible point found")
    point = prob.point_of(best_v)
    active = sum(1 for j in prob.active if point.thetas[j] > 0.0)
    gap = max(0.0, (best_p - envelope) / best_p) if math.isfinite(envelope) else 0.0
    return ConfigurationResult(config, point, best_p, machines, active, prob.evaluations, local_runs, gap)


def solve_configuration(spec: ProblemSpec, config: Configuration,
                        settings: SearchSettings | None = None) -> tuple[OperatingPoint, float]:
    """Minimum-power operating point of one configuration.

    Raises Infeasible when no point meets the product specifications.
    """
    settings = settings or SearchSettings()
    spec.check_admissible()
    res = _solve_configuration(spec, config, settings)
    if not res.feasible:
        raise Infeasible(f"{config.encode()}: {res.message}")
    return res.point, res.power


def solve_configuration_report(spec, config, settings=None) -> OptimizationReport:
    settings = settings or SearchSettings()
    t0 = time.perf_counter()
    spec.check_admissible()
    res = _solve_configuration(spec, config, settings)
    if not res.feasible:
        raise Infeasible(f"{config.encode()}: {res.message}")
    return _report(spec, [res], settings, time.perf_counter() - t0)


def _pick_best(results, rel_tol):
    """Lowest power; results within ``rel_tol`` of it count as ties.

    Ties are real: two crossflow stages in series at one pressure whose
    permeates meet in the same mixer act as a single longer stage, so such
    pairs reach the same optimum up to solver noise.
    """
    feasible = [r for r in results if r.feasible]
    if not feasible:
        return sorted(results, key=ConfigurationResult.sort_key)[0]
    p0 = min(r.power for r in feasible)
    near = [r for r in feasible if r.power <= p0 * (1.0 + rel_tol)]
    return min(near, key=lambda r: (r.machines, r.active_stages, r.config.encode()))


def _report(spec, results, settings, wall):
    best = _pick_best(results, settings.refine_tol)
    state = simulate(spec, best.config, best.point.u, np.array(best.point.thetas))
    cuts = check_cuts(state, spec, use_p5=settings.use_p5)
    ordered = sorted(results, key=lambda r: r.config.encode())
    return OptimizationReport(best.config, best.point, best.power, state, cuts, best.gap, wall, ordered)


def candidate_configurations(n: int, machines: int | None = None) -> list[Configuration]:
    configs = enumerate_configurations(n, allow_inactive=machines is not None)
    if machines is not None:
        configs = [c for c in configs if machine_limit_filter(c, machines)]
    return sorted(configs, key=Configuration.encode)


def _solve_one(args):
    spec, config, settings = args
    return _solve_configuration(spec, config, settings)


def solve_problem(spec: ProblemSpec, settings: SearchSettings | None = None,
                  machines: int | None = None, configs=None) -> OptimizationReport:
    """Best cascade over the enumerated superstructure.

    With ``machines`` the enumeration admits inactive stages and keeps only
    configurations needing at most that many intermediate machines.
    """
    settings = settings or SearchSettings()
    spec.check_admissible()
    t0 = time.perf_counter()
    configs = list(configs) if configs is not None else candidate_configurations(spec.n_stages, machines)
    work = [(spec, c, settings) for c in configs]
    if settings.workers > 1 and len(work) > 1:
        with ProcessPoolExecutor(settings.workers) as pool:
            results = list(pool.map(_solve_one, work))
    else:
        results = [_solve_one(w) for w in work]
    if not any(r.feasible for r in results):
        raise AllInfeasible(f"none of {len(results)} configurations meets the product specifications")
    return _report(spec, results, settings, time.perf_counter() - t0)


class SweepAxis(enum.Enum):
    SELECTIVITY = "selectivity"
    U_UPPER = "u_upper"


@dataclass
class SweepRow:
    value: float
    power: float
    u: float
    config: str
    message: str = ""


def sweep(spec: ProblemSpec, settings: SearchSettings | None, axis: SweepAxis, values,
          config: Configuration | None = None, machines: int | None = None) -> list[SweepRow]:
    """Repeat the search for each value of one parameter.

    With ``config`` only that cascade is optimized; otherwise the full
    superstructure is searched.  Failures become rows with a message.
    """
    settings = settings or SearchSettings()
    rows = []
    for value in values:
        if axis is SweepAxis.SELECTIVITY:
            try:
                sp = spec.replace(mixture=spec.mixture.with_selectivity(float(value)))
            except MembraneError as exc:
                rows.append(SweepRow(float(value), math.nan, math.nan, "", f"{type(exc).__name__}: {exc}"))
                continue
        else:
            sp = spec.replace(u_up=float(value))
        try:
            if config is not None:
                rep = solve_configuration_report(sp, config, settings)
            else:
                rep = solve_problem(sp, settings, machines)
            rows.append(SweepRow(float(value), rep.power, rep.point.u, rep.config.encode()))
        except (Infeasible, AllInfeasible, AdmissibilityError) as exc:
            rows.append(SweepRow(float(value), math.nan, math.nan, "", f"{type(exc).__name__}: {exc}"))
    return rows


def local_scan(spec: ProblemSpec, config: Configuration, count: int,
               settings: SearchSettings | None = None) -> list[tuple[tuple[float, ...], float]]:
    """Single-start local refinements from ``count`` seeded random starts.

    Returns (scaled start, power) pairs, with power = inf where the start
    led to no spec-feasible point.  A diagnostic of how many local optima
    the fixed cascade has and how poor they can be.
    """
    settings = settings or SearchSettings()
    spec.check_admissible()
    rng = np.random.default_rng(_work_seed(settings.seed, config, "scan"))
    out = []
    for _ in range(count):
        v = rng.uniform(0.0, 1.0, 1 + spec.n_stages)
        v[1:] *= THETA_UP
        res = _solve_configuration(spec, config, settings.local_only(v))
        out.append((tuple(float(a) for a in v), res.power))
    return out

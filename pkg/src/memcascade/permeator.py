"""Single-stage crossflow permeator for binary gas or liquid mixtures.

The local flux of both phases is written with one driving-force variable
``u``: ``ln(P_out/P_per)`` for gases and the trans-membrane pressure
difference (Pa) for liquids.  Everything downstream of the mixture enters
through two numbers, the selectivity ``S`` and the driving-force coefficient
``k``; most kernels take ``K = k (S-1)**2`` because that is the combination
that appears in the flux relation

    y - x = K y (1 - y) / (S - (S - 1) y).

The scalar kernels are numba-compiled because the cascade simulator calls
them millions of times during a design search.  The public wrappers validate
their inputs and raise the exceptions from :mod:`memcascade.errors`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

from .errors import AdmissibilityError, ConvergenceError, DomainError, NoRootError

R_GAS = 8.314
EPS_THETA = 1e-3
EPS_X = 1e-3
G_TOL = 1e-12
MAX_ITER = 200

# kernel status codes
OK = 0
NO_ROOT = 1
NO_CONVERGENCE = 2
BAD_INPUT = 3


class Phase(enum.Enum):
    GAS = "gas"
    LIQUID = "liquid"


@dataclass(frozen=True)
class MixtureSpec:
    """Binary mixture A/B with A the more permeable component.

    Molar volumes (m3/mol) and temperature (K) only matter for liquids;
    gases use ``C_A = C_B = 1`` regardless.
    """

    phase: Phase
    selectivity: float
    v_a: float = 0.0
    v_b: float = 0.0
    temperature: float = 303.15
    r_gas: float = R_GAS

    def __post_init__(self):
        if isinstance(self.phase, str):
            object.__setattr__(self, "phase", Phase(self.phase.lower()))
        if not self.selectivity > 1.0:
            raise DomainError(f"selectivity must exceed 1, got {self.selectivity}")
        if self.phase is Phase.LIQUID:
            if not (self.v_a > 0 and self.v_b > 0 and self.temperature > 0):
                raise DomainError("liquid mixtures need positive v_a, v_b and temperature")

    @property
    def c_a(self) -> float:
        if self.phase is Phase.GAS:
            return 1.0
        return self.v_a / (self.r_gas * self.temperature)

    @property
    def c_b(self) -> float:
        if self.phase is Phase.GAS:
            return 1.0
        return self.v_b / (self.r_gas * self.temperature)

    @property
    def beta(self) -> int:
        return 1 if self.phase is Phase.GAS else 0

    def with_selectivity(self, selectivity: float) -> "MixtureSpec":
        return MixtureSpec(self.phase, selectivity, self.v_a, self.v_b,
                           self.temperature, self.r_gas)


@dataclass(frozen=True)
class PermeationResult:
    x_in: float
    x_out: float
    y_in: float
    y_out: float
    y_per: float
    z_in: float
    z_out: float
    theta: float
    k: float


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def k_kernel(s, c_a, c_b, u):
    # expm1 keeps k accurate when the driving force is small
    return (-s * math.expm1(-c_a * u) + math.expm1(-c_b * u)) / ((s - 1.0) ** 2)


@njit(cache=True)
def permeate_y(x, big_k, s):
    """Root in [x, 1] of (y - x)(S - (S-1)y) = K y (1 - y); NaN if none."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    a = big_k - (s - 1.0)
    b = s + (s - 1.0) * x - big_k
    disc = b * b + 4.0 * a * s * x
    if disc < 0.0:
        return math.nan
    if b < 0.0:
        # b < 0 forces a > 0; this form avoids cancellation in b + sqrt(disc)
        y = (math.sqrt(disc) - b) / (2.0 * a)
    else:
        den = b + math.sqrt(disc)
        if den <= 0.0:
            return math.nan
        y = 2.0 * s * x / den
    if y > 1.0:
        y = 1.0
    if y < x:
        y = x
    return y


@njit(cache=True)
def retentate_x(y, big_k, s):
    return y - big_k * y * (1.0 - y) / (s - (s - 1.0) * y)


@njit(cache=True)
def flux_gap(y, big_k, s):
    """z = y - x on the flux curve, written as a function of y."""
    return big_k * y * (1.0 - y) / (s - (s - 1.0) * y)


@njit(cache=True)
def _g_crossflow(y, y_in, d_in, big_k, s, log_keep):
    d = s - (s - 1.0) * y
    return ((s - big_k) * (math.log(y) - math.log(y_in))
            - (1.0 + big_k) * (math.log1p(-y) - math.log1p(-y_in))
            + big_k * (math.log(d) - math.log(d_in))
            - big_k * log_keep)


@njit(cache=True)
def _dg_crossflow(y, big_k, s):
    d = s - (s - 1.0) * y
    return (s - big_k) / y + (1.0 + big_k) / (1.0 - y) - big_k * (s - 1.0) / d


@njit(cache=True)
def crossflow_kernel(x_in, theta, big_k, s):
    """Return (x_out, y_in, y_out, y_per, status).

    The analytical crossflow relation is solved for the exit local permeate
    fraction y_out (x_out is explicit in y_out), so no nested quadratic is
    needed inside the root finder.  The residual is the same G as in the
    x_out form because the map y_out -> x_out is a monotone bijection.
    """
    nan = math.nan
    if not (0.0 < x_in < 1.0) or theta < 0.0 or theta >= 1.0:
        return nan, nan, nan, nan, BAD_INPUT
    y_in = permeate_y(x_in, big_k, s)
    if y_in != y_in:
        return nan, nan, nan, nan, NO_ROOT
    if theta == 0.0 or big_k <= 0.0:
        return x_in, y_in, y_in, y_in, OK
    if y_in >= 1.0:
        # pure-A limit in floating point: nothing left to separate
        return x_in, y_in, y_in, x_in, OK
    d_in = s - (s - 1.0) * y_in
    log_keep = math.log1p(-theta)
    # G(y_in) = -K ln(1 - theta) > 0; walk down until G < 0
    hi = y_in
    lo = 0.5 * y_in
    g_lo = _g_crossflow(lo, y_in, d_in, big_k, s, log_keep)
    while g_lo > 0.0:
        hi = lo
        lo *= 0.5
        if lo < 1e-300:
            return nan, nan, nan, nan, NO_ROOT
        g_lo = _g_crossflow(lo, y_in, d_in, big_k, s, log_keep)
    # near y -> 0, G ~ (S - K) ln(y/y_in) - K ln(1 - theta)
    y = y_in * math.exp(big_k * log_keep / (s - big_k))
    if not (lo < y < hi):
        y = 0.5 * (lo + hi)
    status = NO_CONVERGENCE
    for _ in range(MAX_ITER):
        g = _g_crossflow(y, y_in, d_in, big_k, s, log_keep)
        if abs(g) <= G_TOL:
            status = OK
            break
        if g < 0.0:
            lo = y
        else:
            hi = y
        step = g / _dg_crossflow(y, big_k, s)
        y_new = y - step
        if not (lo < y_new < hi):
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= 1e-16 * y:
            status = OK
            y = y_new
            break
        y = y_new
    if status != OK:
        return nan, nan, nan, nan, status
    x_out = retentate_x(y, big_k, s)
    if theta < 1e-9:
        y_per = y_in
    else:
        y_per = (x_in - (1.0 - theta) * x_out) / theta
    return x_out, y_in, y, y_per, OK


@njit(cache=True)
def perfect_mixing_kernel(x_in, theta, big_k, s):
    """Return (x_out, y_per, status) for a single well-mixed cell."""
    nan = math.nan
    if not (0.0 < x_in < 1.0) or theta < 0.0 or theta >= 1.0:
        return nan, nan, BAD_INPUT
    y_in = permeate_y(x_in, big_k, s)
    if y_in != y_in:
        return nan, nan, NO_ROOT
    if theta == 0.0 or big_k <= 0.0:
        return x_in, y_in, OK
    lo = 0.0
    hi = y_in
    y = y_in
    status = NO_CONVERGENCE
    for _ in range(MAX_ITER):
        d = s - (s - 1.0) * y
        q = (1.0 - theta) * retentate_x(y, big_k, s) + theta * y - x_in
        if abs(q) <= 1e-15:
            status = OK
            break
        if q < 0.0:
            lo = y
        else:
            hi = y
        dxdy = 1.0 - big_k * (s - 2.0 * s * y + (s - 1.0) * y * y) / (d * d)
        y_new = y - q / ((1.0 - theta) * dxdy + theta)
        if not (lo < y_new < hi):
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= 1e-16 * y:
            y = y_new
            status = OK
            break
        y = y_new
    if status != OK:
        return nan, nan, status
    return retentate_x(y, big_k, s), y, OK


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def compute_k(mix: MixtureSpec, u: float) -> float:
    """Driving-force coefficient k at pressure variable ``u``.

    Returns exactly 0 for ``u = 0``.  Raises :class:`AdmissibilityError`
    when k is negative, i.e. the membrane would show negative rejection.
    """
    if u < 0:
        raise DomainError(f"pressure variable must be non-negative, got {u}")
    k = k_kernel(mix.selectivity, mix.c_a, mix.c_b, float(u))
    # k == 0 at u > 0 is either a mixture at the threshold or underflow at tiny u;
    # the slope of k at u = 0, proportional to S c_a - c_b, tells them apart
    if k < 0.0 or (k == 0.0 and u > 0 and mix.selectivity * mix.c_a <= mix.c_b):
        raise AdmissibilityError(
            f"k = {k:.3e} <= 0 at u = {u}: selectivity {mix.selectivity} is below "
            "the negative-rejection threshold")
    return k


def _big_k(k, s):
    return k * (s - 1.0) ** 2


def local_permeate_fraction(x: float, k: float, s: float) -> float:
    """Local permeate mole fraction in equilibrium with retentate fraction ``x``."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"mole fraction out of range: {x}")
    if k < 0 or s <= 1:
        raise DomainError(f"need k >= 0 and S > 1, got k={k}, S={s}")
    y = permeate_y(x, _big_k(k, s), s)
    if math.isnan(y):
        raise NoRootError(f"flux relation has no root in [0, 1] for x={x}, k={k}, S={s}")
    return y


def local_retentate_fraction(y: float, k: float, s: float) -> float:
    """Inverse of :func:`local_permeate_fraction`."""
    if not 0.0 <= y <= 1.0:
        raise DomainError(f"mole fraction out of range: {y}")
    x = retentate_x(y, _big_k(k, s), s)
    if x < 0.0 or x > 1.0:
        raise DomainError(f"y={y} is not reachable at k={k}, S={s} (x={x})")
    return x


def flux_difference(y: float, k: float, s: float) -> float:
    """``z = y - x`` on the flux curve as a function of the permeate fraction."""
    return flux_gap(y, _big_k(k, s), s)


def dy_dx(x: float, y: float, k: float, s: float) -> float:
    """Slope of the local permeate fraction with respect to the retentate fraction."""
    if y == 0.0:
        return 0.0
    d = s - (s - 1.0) * y
    return y / (x + _big_k(k, s) * y * y / (d * d))


def dy_du(x: float, y: float, k: float, mix: MixtureSpec, u: float) -> float:
    """Sensitivity of the local permeate fraction to the pressure variable."""
    s = mix.selectivity
    dk = (s * mix.c_a * math.exp(-mix.c_a * u) - mix.c_b * math.exp(-mix.c_b * u)) / (s - 1.0) ** 2
    return dk * (s - 1.0) ** 2 / (s * x / (y * y) + (1.0 - x) / (1.0 - y) ** 2)


def _check_stage_inputs(x_in, theta):
    if not 0.0 < x_in < 1.0:
        raise DomainError(f"feed mole fraction must lie in (0, 1), got {x_in}")
    if not 0.0 <= theta <= 1.0 - EPS_THETA + 1e-15:
        raise DomainError(f"stage cut must lie in [0, 1 - eps_theta], got {theta}")


def _raise_for(status, what):
    if status == NO_ROOT:
        raise NoRootError(f"{what}: flux relation has no admissible root")
    if status == NO_CONVERGENCE:
        raise ConvergenceError(f"{what}: root finder did not converge in {MAX_ITER} iterations")
    if status == BAD_INPUT:
        raise DomainError(f"{what}: invalid inputs")


def crossflow_solve(mix: MixtureSpec, u: float, x_in: float, theta: float) -> PermeationResult:
    """Solve one crossflow stage for its exit and permeate compositions."""
    _check_stage_inputs(x_in, theta)
    k = compute_k(mix, u)
    return crossflow_from_k(k, mix.selectivity, x_in, theta)


def crossflow_from_k(k: float, s: float, x_in: float, theta: float) -> PermeationResult:
    _check_stage_inputs(x_in, theta)
    x_out, y_in, y_out, y_per, status = crossflow_kernel(x_in, theta, _big_k(k, s), s)
    _raise_for(status, "crossflow stage")
    return PermeationResult(x_in, x_out, y_in, y_out, y_per,
                            y_in - x_in, y_out - x_out, theta, k)


def perfect_mixing_solve(mix: MixtureSpec, u: float, x_in: float, theta: float) -> PermeationResult:
    """Well-mixed cell: permeate set by the flux relation at the exit retentate."""
    _check_stage_inputs(x_in, theta)
    k = compute_k(mix, u)
    s = mix.selectivity
    x_out, y_per, status = perfect_mixing_kernel(x_in, theta, _big_k(k, s), s)
    _raise_for(status, "perfect-mixing stage")
    return PermeationResult(x_in, x_out, y_per, y_per, y_per,
                            y_per - x_out, y_per - x_out, theta, k)


def _branch_values(mix, u):
    ca, cb = mix.c_a, mix.c_b
    negative_rejection = math.expm1(-cb * u) / math.expm1(-ca * u)
    dk_sign = (cb / ca) * math.exp((ca - cb) * u)
    return negative_rejection, dk_sign


def min_selectivity(mix: MixtureSpec, u_lo: float, u_up: float) -> float:
    """Smallest selectivity (exclusive) that keeps k > 0 and dk/du >= 0 on [u_lo, u_up]."""
    if not 0 < u_lo <= u_up:
        raise DomainError(f"need 0 < u_lo <= u_up, got [{u_lo}, {u_up}]")
    if mix.phase is Phase.GAS:
        return 1.0
    best = max(max(_branch_values(mix, u_lo)), max(_branch_values(mix, u_up)))
    if u_up > u_lo:
        for branch in (0, 1):
            res = minimize_scalar(lambda u: -_branch_values(mix, u)[branch],
                                  bounds=(u_lo, u_up), method="bounded",
                                  options={"xatol": 1e-10 * u_up})
            best = max(best, -res.fun)
    return best


def check_admissible(mix: MixtureSpec, u_lo: float, u_up: float) -> None:
    threshold = min_selectivity(mix, u_lo, u_up)
    if not mix.selectivity > threshold:
        raise AdmissibilityError(
            f"selectivity {mix.selectivity} does not exceed the minimum {threshold:.6g} "
            f"required on u in [{u_lo:g}, {u_up:g}]")


def theta_grid(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0 - EPS_THETA, n)

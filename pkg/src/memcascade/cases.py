"""Reference problem instances.

Thirteen benchmark separations (five gas mixtures, one xylene liquid
family) plus the fixed-cascade xylene demonstration.  Gas cases use a
pressure-ratio window of [1.1, 9]; liquid cases a trans-membrane pressure
difference of [30, 107] bar.
"""

from __future__ import annotations

from .cascade import Configuration, ProblemSpec

XYLENE_V_A = 1.233e-4
XYLENE_V_B = 1.215e-4

# case: (phase, x_feed, y_target, recovery, selectivity)
_TABLE = {
    1: ("gas", 0.60, 0.95, 0.987, 25.0),
    2: ("gas", 0.10, 0.95, 0.817, 25.0),
    3: ("gas", 0.10, 0.69, 0.824, 12.0),
    4: ("gas", 0.30, 0.867, 0.932, 21.0),
    5: ("gas", 0.215, 0.99, 0.982, 38.0),
    6: ("gas", 0.80, 0.90, 0.90, 5.0),
    7: ("gas", 0.70, 0.996, 0.978, 35.0),
    8: ("gas", 0.70, 0.92, 0.978, 35.0),
    9: ("liquid", 0.65, 0.995, 0.90, 50.0),
    10: ("liquid", 0.65, 0.995, 0.99, 50.0),
    11: ("liquid", 0.90, 0.995, 0.90, 50.0),
    12: ("liquid", 0.90, 0.995, 0.99, 50.0),
    13: ("liquid", 0.236, 0.995, 0.975, 50.0),
}

CASE_NUMBERS = tuple(_TABLE)

# fixed cascade of the local-versus-global demonstration
DEMO_CONFIGURATION = Configuration.decode("F2|B,R1,R1,R1|N")


def case(number: int, n_stages: int = 4, **overrides) -> ProblemSpec:
    """Benchmark instance ``number`` (1-13) with feed 250 mol/s."""
    phase, x_f, y, rec, s = _TABLE[number]
    if phase == "gas":
        spec = ProblemSpec.gas(n_stages, 250.0, x_f, y, rec, s, r_lo=1.1, r_up=9.0)
    else:
        spec = ProblemSpec.liquid(n_stages, 250.0, x_f, y, rec, s, XYLENE_V_A, XYLENE_V_B)
    return spec.replace(**overrides) if overrides else spec


def xylene_demo() -> ProblemSpec:
    """65 % p-xylene feed, 147 mol/s permeate product at 0.995."""
    rec = ProblemSpec.recovery_from_flow(250.0, 0.65, 147.0, 0.995)
    return ProblemSpec.liquid(4, 250.0, 0.65, 0.995, rec, 50.0, XYLENE_V_A, XYLENE_V_B)

"""Command-line front end.

Subcommands: ``validate`` (single-stage model curves), ``simulate`` (one
operating point), ``optimize`` (superstructure or fixed-cascade search),
``sweep`` (repeat the search over selectivity or upper pressure) and
``init`` (write a problem-file template).

Exit codes: 0 success, 2 infeasible, 3 parse or I/O error, 4 numerical
failure.

Problem files are INI-style::

    [mixture]     phase, selectivity, v_a, v_b, temperature_k
    [feed]        flow_mol_s, x_f, pressure_bar
    [product]     y_per, recovery
    [pressure]    u_lo, u_up        (bar for liquids, pressure ratio for gases)
    [efficiency]  comp, pump, turbocharger
    [cascade]     n_stages
    [search]      SearchSettings overrides
    [operating]   configuration, u, thetas          (simulate only)
    [validate]    x_in, u, selectivities, points    (validate only)
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import cases
from .bounds_cuts import check_cuts
from .cascade import Configuration, ProblemSpec, power, simulate
from .errors import (
    AdmissibilityError,
    AllInfeasible,
    DomainError,
    Infeasible,
    MembraneError,
    ParseError,
)
from .optimizer import SearchSettings, SweepAxis, solve_configuration_report, solve_problem, sweep
from .permeator import MixtureSpec, Phase, crossflow_solve, perfect_mixing_solve, theta_grid

log = logging.getLogger("memcascade")

EXIT_OK, EXIT_INFEASIBLE, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4
BAR = 1e5


# ---------------------------------------------------------------------------
# problem files
# ---------------------------------------------------------------------------

@dataclass
class ProblemFile:
    spec: ProblemSpec
    feed_pressure_bar: float | None = None
    search: dict = field(default_factory=dict)
    operating: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    """What one invocation was asked to do."""

    command: str
    input: str | None
    out: str
    seed: int | None
    overrides: dict


def manifest_of(args) -> RunManifest:
    keys = ("machines", "starts", "grid", "config", "no_p5_cuts", "axis", "values", "preset", "points")
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) not in (None, False)}
    return RunManifest(args.command, getattr(args, "input", None), args.out, getattr(args, "seed", None), overrides)


class _Reader:
    def __init__(self, path):
        self.path = path
        try:
            with open(path, encoding="utf-8") as fh:
                self.lines = fh.read().splitlines()
        except OSError as exc:
            raise ParseError(f"cannot read problem file: {exc.strerror}", path) from exc
        self.cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            self.cp.read_string("\n".join(self.lines), source=path)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            raise ParseError(str(exc).splitlines()[0], path, line) from exc

    def line_of(self, section, key=None):
        current = None
        for no, raw in enumerate(self.lines, start=1):
            text = raw.split("#", 1)[0].split(";", 1)[0].strip()
            if text.startswith("[") and text.endswith("]"):
                current = text[1:-1].strip().lower()
                if key is None and current == section:
                    return no
            elif current == section and key is not None:
                name = text.split("=", 1)[0].split(":", 1)[0].strip().lower()
                if name == key:
                    return no
        return None

    def fail(self, message, section, key=None):
        raise ParseError(message, self.path, self.line_of(section, key))

    def has(self, section, key):
        return self.cp.has_option(section, key)

    def raw(self, section, key, default=None):
        if not self.cp.has_option(section, key):
            if default is not None:
                return default
            if not self.cp.has_section(section):
                raise ParseError(f"missing section [{section}]", self.path)
            self.fail(f"missing key '{key}' in [{section}]", section)
        return self.cp.get(section, key)

    def number(self, section, key, default=None):
        text = self.raw(section, key, None if default is None else repr(default))
        try:
            value = float(text)
        except ValueError:
            self.fail(f"[{section}] {key}: expected a number, got {text!r}", section, key)
        if not math.isfinite(value):
            self.fail(f"[{section}] {key}: value must be finite", section, key)
        return value

    def numbers(self, section, key):
        text = self.raw(section, key)
        try:
            return [float(t) for t in text.replace(",", " ").split()]
        except ValueError:
            self.fail(f"[{section}] {key}: expected a list of numbers, got {text!r}", section, key)


def _search_overrides(reader):
    out = {}
    if not reader.cp.has_section("search"):
        return out
    fields = {f.name: f for f in dataclasses.fields(SearchSettings)}
    for key, text in reader.cp.items("search"):
        if key not in fields or key == "start_point":
            reader.fail(f"[search] unknown setting '{key}'", "search", key)
        default = fields[key].default
        try:
            if isinstance(default, bool):
                value = reader.cp.getboolean("search", key)
            elif isinstance(default, int):
                value = int(text)
            else:
                value = float(text)
        except ValueError:
            reader.fail(f"[search] {key}: cannot parse {text!r}", "search", key)
        out[key] = value
    return out


def read_problem(path) -> ProblemFile:
    """Parse and validate a problem file."""
    r = _Reader(path)
    phase_text = r.raw("mixture", "phase").strip().lower()
    if phase_text not in ("gas", "liquid"):
        r.fail(f"[mixture] phase must be 'gas' or 'liquid', got {phase_text!r}", "mixture", "phase")
    gas = phase_text == "gas"
    try:
        mix = MixtureSpec(
            Phase(phase_text),
            r.number("mixture", "selectivity"),
            0.0 if gas else r.number("mixture", "v_a"),
            0.0 if gas else r.number("mixture", "v_b"),
            r.number("mixture", "temperature_k", 303.15),
        )
    except DomainError as exc:
        r.fail(f"[mixture] {exc}", "mixture", "selectivity")
    lo, up = r.number("pressure", "u_lo"), r.number("pressure", "u_up")
    if gas:
        if not 1.0 < lo <= up:
            r.fail("[pressure] gas pressure ratios need 1 < u_lo <= u_up", "pressure", "u_lo")
        u_lo, u_up = math.log(lo), math.log(up)
    else:
        u_lo, u_up = lo * BAR, up * BAR
    try:
        spec = ProblemSpec(
            n_stages=int(r.number("cascade", "n_stages", 4)),
            feed_flow=r.number("feed", "flow_mol_s"),
            x_feed=r.number("feed", "x_f"),
            y_target=r.number("product", "y_per"),
            recovery=r.number("product", "recovery"),
            mixture=mix,
            u_lo=u_lo,
            u_up=u_up,
            eta_comp=r.number("efficiency", "comp", 0.75),
            eta_pump=r.number("efficiency", "pump", 0.75),
            eta_tc=r.number("efficiency", "turbocharger", 0.80),
        )
    except DomainError as exc:
        raise ParseError(f"inconsistent problem: {exc}", path) from exc
    try:
        spec.check_admissible()
    except AdmissibilityError as exc:
        r.fail(str(exc), "mixture", "selectivity")
    pf = ProblemFile(spec, search=_search_overrides(r))
    if r.has("feed", "pressure_bar"):
        pf.feed_pressure_bar = r.number("feed", "pressure_bar")
    if r.cp.has_section("operating"):
        op = {}
        if r.has("operating", "configuration"):
            text = r.raw("operating", "configuration")
            try:
                op["configuration"] = Configuration.decode(text)
            except DomainError as exc:
                r.fail(str(exc), "operating", "configuration")
        if r.has("operating", "u"):
            op["u"] = _to_internal(spec, r.number("operating", "u"))
        if r.has("operating", "thetas"):
            op["thetas"] = r.numbers("operating", "thetas")
        pf.operating = op
    if r.cp.has_section("validate"):
        val = {}
        if r.has("validate", "x_in"):
            val["x_in"] = r.number("validate", "x_in")
        if r.has("validate", "u"):
            val["u"] = _to_internal(spec, r.number("validate", "u"))
        if r.has("validate", "selectivities"):
            val["selectivities"] = r.numbers("validate", "selectivities")
        if r.has("validate", "points"):
            val["points"] = int(r.number("validate", "points"))
        pf.validate = val
    return pf


def _to_internal(spec, value):
    return math.log(value) if spec.is_gas else value * BAR


def _to_file_units(spec, u):
    return math.exp(u) if spec.is_gas else u / BAR


def _short(value):
    # repr is the shortest text that reads back to the same double
    return repr(float(value))


def _file_pressure(spec, u):
    # shortest file value that converts back to exactly ``u``
    value = _to_file_units(spec, u)
    for digits in range(1, 18):
        text = f"{value:.{digits}g}"
        if _to_internal(spec, float(text)) == u:
            return text
    return repr(value)


def problem_to_ini(spec: ProblemSpec, feed_pressure_bar: float | None = None) -> str:
    m = spec.mixture
    lines = ["# memcascade problem file", "", "[mixture]", f"phase = {m.phase.value}",
             f"selectivity = {_short(m.selectivity)}"]
    if not spec.is_gas:
        lines += [f"v_a = {_short(m.v_a)}", f"v_b = {_short(m.v_b)}"]
    lines += [f"temperature_k = {_short(m.temperature)}", "", "[feed]",
              f"flow_mol_s = {_short(spec.feed_flow)}", f"x_f = {_short(spec.x_feed)}"]
    if feed_pressure_bar is not None:
        lines.append(f"pressure_bar = {_short(feed_pressure_bar)}")
    unit = "pressure ratio" if spec.is_gas else "bar"
    lines += ["", "[product]", f"y_per = {_short(spec.y_target)}", f"recovery = {_short(spec.recovery)}",
              "", f"# {unit}", "[pressure]", f"u_lo = {_file_pressure(spec, spec.u_lo)}",
              f"u_up = {_file_pressure(spec, spec.u_up)}", "", "[efficiency]",
              f"comp = {_short(spec.eta_comp)}", f"pump = {_short(spec.eta_pump)}",
              f"turbocharger = {_short(spec.eta_tc)}", "", "[cascade]",
              f"n_stages = {spec.n_stages}", "", "[search]", "# starts = 64", "# grid = 9", ""]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _num(value):
    # repr gives the shortest round-trip text and always uses '.'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _settings(pf: ProblemFile | None, args) -> SearchSettings:
    overrides = dict(pf.search) if pf else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.starts is not None:
        overrides["starts"] = args.starts
    if args.grid is not None:
        overrides["grid"] = args.grid
    if args.no_p5_cuts:
        overrides["use_p5"] = False
    try:
        return SearchSettings.from_env(**overrides)
    except ValueError as exc:
        raise ParseError(f"invalid search settings: {exc}") from exc


def _need_input(args):
    if not args.input:
        raise ParseError(f"'{args.command}' needs --input")
    return read_problem(args.input)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

VALIDATION_PRESETS = {
    "o2-n2": {"x_in": 0.205, "ratio": 8.4, "selectivities": [5.3]},
    "co2-ch4": {"x_in": 0.60, "ratio": 4.0, "selectivities": [3.58, 2.9]},
}


def validation_rows(mix: MixtureSpec, u: float, x_in: float, points: int):
    cross, mixed = [], []
    for theta in theta_grid(points):
        cf = crossflow_solve(mix, u, x_in, float(theta))
        pm = perfect_mixing_solve(mix, u, x_in, float(theta))
        cross.append((float(theta), cf.y_per, cf.x_out))
        mixed.append((float(theta), pm.y_per, pm.x_out))
    return cross, mixed


def cmd_validate(args) -> int:
    out = _outdir(args.out)
    points = args.points
    if args.input:
        pf = read_problem(args.input)
        v = pf.validate
        mix0 = pf.spec.mixture
        u = v.get("u", pf.spec.u_up)
        x_in = v.get("x_in", pf.spec.x_feed)
        points = v.get("points", points)
        mixes = [mix0.with_selectivity(s) for s in v.get("selectivities", [mix0.selectivity])]
        tag = "input"
    else:
        preset = VALIDATION_PRESETS[args.preset]
        u, x_in, tag = math.log(preset["ratio"]), preset["x_in"], args.preset
        mixes = [MixtureSpec(Phase.GAS, s) for s in preset["selectivities"]]
    header = ["theta", "y_per", "x_out"]
    for mix in mixes:
        suffix = tag if len(mixes) == 1 else f"{tag}_S{_short(mix.selectivity)}"
        cross, mixed = validation_rows(mix, u, x_in, points)
        _write_csv(os.path.join(out, f"crossflow_{suffix}.csv"), header, cross)
        _write_csv(os.path.join(out, f"perfect_mixing_{suffix}.csv"), header, mixed)
        print(f"wrote crossflow_{suffix}.csv, perfect_mixing_{suffix}.csv ({points} points)")
    return EXIT_OK


def state_lines(spec, state):
    rows = [("configuration", state.config.encode()), ("u", state.u),
            ("u_file_units", _to_file_units(spec, state.u)), ("k", state.k),
            ("power_W", power(spec, state)), ("permeate_flow", state.permeate_flow),
            ("permeate_purity", state.permeate_purity), ("retentate_flow", state.retentate_flow),
            ("retentate_purity", state.retentate_purity), ("recovery", state.recovery),
            ("sweeps", state.sweeps)]
    for j in range(1, state.n_stages + 1):
        i = j - 1
        for name in ("thetas", "f_in", "f_per", "f_out", "x_in", "x_out", "y_in", "y_out", "y_per"):
            label = "theta" if name == "thetas" else name
            rows.append((f"stage{j}.{label}", getattr(state, name)[i]))
    return rows


def cmd_simulate(args) -> int:
    pf = _need_input(args)
    op = pf.operating
    config = Configuration.decode(args.config) if args.config else op.get("configuration")
    if config is None or "u" not in op or "thetas" not in op:
        raise ParseError("[operating] needs configuration, u and thetas", args.input)
    spec = pf.spec
    if config.n_stages != spec.n_stages:
        raise ParseError(f"configuration has {config.n_stages} stages, [cascade] says {spec.n_stages}", args.input)
    state = simulate(spec, config, op["u"], np.array(op["thetas"]))
    cuts = check_cuts(state, spec, use_p5=not args.no_p5_cuts)
    out = _outdir(args.out)
    rows = state_lines(spec, state)
    _write_text(os.path.join(out, "simulate_state.txt"), "\n".join(f"{k} = {_num(v)}" for k, v in rows))
    report = [f"configuration     {config.encode()}",
              f"power_kW          {power(spec, state) / 1e3:.6f}",
              f"permeate          {state.permeate_flow:.6f} mol/s at {state.permeate_purity:.8f}",
              f"retentate         {state.retentate_flow:.6f} mol/s at {state.retentate_purity:.8f}",
              f"recovery          {state.recovery:.8f}",
              f"recycle sweeps    {state.sweeps}",
              f"cuts              {cuts}"]
    _write_text(os.path.join(out, "simulate_report.txt"), "\n".join(report))
    print("\n".join(report))
    return EXIT_OK


def _configuration_rows(report):
    rows = []
    for r in report.table:
        thetas = " ".join(_num(t) for t in r.point.thetas) if r.feasible else ""
        rows.append((r.config.encode(), int(r.feasible), r.power if r.feasible else math.nan,
                     r.point.u if r.feasible else math.nan, thetas, r.machines, r.active_stages,
                     r.evaluations, r.local_runs, r.gap, r.message))
    return rows


CONFIG_HEADER = ["configuration", "feasible", "power_W", "u", "thetas", "machines", "active_stages",
                 "evaluations", "local_runs", "coverage_gap", "message"]


def cmd_optimize(args) -> int:
    pf = _need_input(args)
    settings = _settings(pf, args)
    if args.config:
        config = Configuration.decode(args.config)
        report = solve_configuration_report(pf.spec, config, settings)
    else:
        report = solve_problem(pf.spec, settings, machines=args.machines)
    out = _outdir(args.out)
    _write_text(os.path.join(out, "optimize_report.txt"), report.summary())
    _write_text(os.path.join(out, "optimize_state.txt"),
                "\n".join(f"{k} = {_num(v)}" for k, v in state_lines(pf.spec, report.state)))
    _write_csv(os.path.join(out, "configurations.csv"), CONFIG_HEADER, _configuration_rows(report))
    print(report.summary())
    log.info("wall time %.1f s", report.wall_time)
    return EXIT_OK


def cmd_sweep(args) -> int:
    pf = _need_input(args)
    settings = _settings(pf, args)
    if not args.values:
        raise ParseError("sweep needs --values")
    try:
        values = [float(v) for v in args.values.replace(",", " ").split()]
    except ValueError as exc:
        raise ParseError(f"--values: {exc}") from exc
    axis = SweepAxis(args.axis)
    internal = values if axis is SweepAxis.SELECTIVITY else [_to_internal(pf.spec, v) for v in values]
    config = Configuration.decode(args.config) if args.config else None
    rows = sweep(pf.spec, settings, axis, internal, config=config, machines=args.machines)
    out = _outdir(args.out)
    table = [(v, r.power, r.u, _to_file_units(pf.spec, r.u) if math.isfinite(r.u) else math.nan,
              r.config, r.message) for v, r in zip(values, rows)]
    _write_csv(os.path.join(out, "sweep.csv"),
               [axis.value, "power_W", "u", "u_file_units", "configuration", "message"], table)
    for v, r in zip(values, rows):
        shown = f"{r.power / 1e3:.3f} kW  {r.config}" if math.isfinite(r.power) else r.message
        print(f"{_short(v):>10}  {shown}")
    if all(not math.isfinite(r.power) for r in rows):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_init(args) -> int:
    spec = cases.case(args.case, n_stages=args.stages)
    text = problem_to_ini(spec)
    if args.out and args.out != "-":
        path = args.out
        if os.path.isdir(path):
            path = os.path.join(path, "problem.ini")
        _write_text(path, text)
        print(f"wrote {path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memcascade", description="Minimum-power membrane cascade design")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="."):
        sp.add_argument("--input", "-i", help="problem file")
        sp.add_argument("--out", "-o", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int)

    def search(sp):
        sp.add_argument("--machines", type=int, help="limit on intermediate compressors/pumps")
        sp.add_argument("--no-p5-cuts", action="store_true", help="disable the stage-monotonicity cuts")
        sp.add_argument("--starts", type=int)
        sp.add_argument("--grid", type=int)
        sp.add_argument("--config", help="fixed configuration, e.g. 'F2|B,R1,R1,R1|N'")

    v = sub.add_parser("validate", help="single-stage crossflow and perfect-mixing curves")
    common(v)
    v.add_argument("--preset", choices=sorted(VALIDATION_PRESETS), default="o2-n2")
    v.add_argument("--points", type=int, default=50)

    s = sub.add_parser("simulate", help="simulate one operating point")
    common(s)
    s.add_argument("--config")
    s.add_argument("--no-p5-cuts", action="store_true")

    o = sub.add_parser("optimize", help="minimum-power design search")
    common(o)
    search(o)

    w = sub.add_parser("sweep", help="repeat the search over one parameter")
    common(w)
    search(w)
    w.add_argument("--axis", choices=[a.value for a in SweepAxis], default="selectivity")
    w.add_argument("--values", help="comma-separated values (bar or pressure ratio for u_upper)")

    t = sub.add_parser("init", help="write a problem-file template")
    t.add_argument("--case", type=int, default=12, choices=cases.CASE_NUMBERS)
    t.add_argument("--stages", type=int, default=4)
    t.add_argument("--out", "-o", default="-", help="file path, directory or '-' for stdout")
    return p


COMMANDS = {"validate": cmd_validate, "simulate": cmd_simulate, "optimize": cmd_optimize,
            "sweep": cmd_sweep, "init": cmd_init}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    log.info("%s", manifest_of(args))
    try:
        return COMMANDS[args.command](args)
    except (Infeasible, AllInfeasible) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except MembraneError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

import csv
import math
import os

import numpy as np
import pytest

from memcascade.cases import CASE_NUMBERS, DEMO_CONFIGURATION, case, xylene_demo
from memcascade.cascade import simulate
from memcascade.cli import EXIT_INFEASIBLE, EXIT_NUMERIC, EXIT_OK, EXIT_PARSE, main, problem_to_ini, read_problem
from memcascade.errors import ParseError
from memcascade.permeator import MixtureSpec, Phase, crossflow_solve

GAS_SINGLE = """\
[mixture]
phase = gas
selectivity = 2.0

[feed]
flow_mol_s = 100
x_f = 0.3

[product]
y_per = 0.98
recovery = 0.9

[pressure]
u_lo = 1.1
u_up = 3

[cascade]
n_stages = 1

[search]
starts = 2
grid = 5
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


@pytest.mark.parametrize("number", CASE_NUMBERS)
def test_init_template_round_trips(tmp_path, number):
    path = tmp_path / "p.ini"
    assert main(["init", "--case", str(number), "--out", str(path)]) == EXIT_OK
    assert read_problem(str(path)).spec == case(number)


def test_init_round_trip_other_stage_count(tmp_path):
    path = write(tmp_path, "p.ini", problem_to_ini(case(8, n_stages=3)))
    assert read_problem(path).spec == case(8, n_stages=3)


def test_init_into_directory(tmp_path):
    assert main(["init", "--case", "5", "--out", str(tmp_path)]) == EXIT_OK
    assert read_problem(str(tmp_path / "problem.ini")).spec == case(5)


def test_validate_o2_n2_csvs(tmp_path):
    assert main(["validate", "--preset", "o2-n2", "--points", "50", "--out", str(tmp_path)]) == EXIT_OK
    header, rows = read_csv(tmp_path / "crossflow_o2-n2.csv")
    assert header == ["theta", "y_per", "x_out"]
    assert len(rows) == 50
    x_out = [r[2] for r in rows]
    assert all(b < a for a, b in zip(x_out, x_out[1:]))
    # theta = 0 row carries the inlet-end permeate limit
    assert rows[0][0] == 0.0
    y_in = crossflow_solve(MixtureSpec(Phase.GAS, 5.3), math.log(8.4), 0.205, 0.0).y_in
    assert rows[0][1] == y_in
    header, mixed = read_csv(tmp_path / "perfect_mixing_o2-n2.csv")
    assert header == ["theta", "y_per", "x_out"]
    assert all(m[1] <= c[1] + 1e-12 for m, c in zip(mixed, rows))


def test_validate_co2_ch4_writes_both_selectivities(tmp_path):
    assert main(["validate", "--preset", "co2-ch4", "--out", str(tmp_path)]) == EXIT_OK
    names = sorted(os.listdir(tmp_path))
    assert names == ["crossflow_co2-ch4_S2.9.csv", "crossflow_co2-ch4_S3.58.csv",
                     "perfect_mixing_co2-ch4_S2.9.csv", "perfect_mixing_co2-ch4_S3.58.csv"]


def test_validate_csv_full_precision(tmp_path):
    main(["validate", "--out", str(tmp_path)])
    with open(tmp_path / "crossflow_o2-n2.csv") as fh:
        fh.readline()
        fields = fh.readline().strip().split(",")
    # repr text reads back to the same double
    assert all(repr(float(f)) == f for f in fields)


def test_validate_from_problem_file(tmp_path):
    text = problem_to_ini(case(8)) + "\n[validate]\nx_in = 0.5\nu = 4\nselectivities = 10\npoints = 7\n"
    path = write(tmp_path, "v.ini", text)
    assert main(["validate", "-i", path, "-o", str(tmp_path / "out")]) == EXIT_OK
    _, rows = read_csv(tmp_path / "out" / "crossflow_input.csv")
    assert len(rows) == 7
    want = crossflow_solve(MixtureSpec(Phase.GAS, 10.0), math.log(4.0), 0.5, rows[3][0])
    assert rows[3][2] == want.x_out


def _key_values(path):
    out = {}
    for line in open(path):
        k, v = line.split(" = ")
        out[k] = v.strip()
    return out


def test_simulate_demo_point(tmp_path):
    thetas = [0.5776, 0.4044, 0.3903, 0.7575]
    text = problem_to_ini(xylene_demo()) + (
        "\n[operating]\nconfiguration = F2|B,R1,R1,R1|N\nu = 107\nthetas = "
        + ", ".join(map(str, thetas)) + "\n")
    path = write(tmp_path, "s.ini", text)
    assert main(["simulate", "-i", path, "-o", str(tmp_path)]) == EXIT_OK
    kv = _key_values(tmp_path / "simulate_state.txt")
    state = simulate(xylene_demo(), DEMO_CONFIGURATION, 107e5, np.array(thetas))
    assert float(kv["permeate_flow"]) == state.permeate_flow
    assert kv["configuration"] == "F2|B,R1,R1,R1|N"
    assert 1700e3 < float(kv["power_W"]) < 1860e3
    assert "cuts" in (tmp_path / "simulate_report.txt").read_text()


def test_simulate_bad_theta_is_numeric_failure(tmp_path):
    text = problem_to_ini(case(12)) + "\n[operating]\nconfiguration = F2|B,R1,R1,R1|N\nu = 107\nthetas = 0.5 1.5 0.4 0.7\n"
    path = write(tmp_path, "s.ini", text)
    assert main(["simulate", "-i", path, "-o", str(tmp_path)]) == EXIT_NUMERIC


def test_simulate_without_operating_section(tmp_path):
    path = write(tmp_path, "s.ini", problem_to_ini(case(12)))
    assert main(["simulate", "-i", path, "-o", str(tmp_path)]) == EXIT_PARSE


def test_parse_error_points_at_line(tmp_path, capsys):
    text = problem_to_ini(case(12)).replace("x_f = 0.9", "x_f = nine")
    path = write(tmp_path, "bad.ini", text)
    line = text.splitlines().index("x_f = nine") + 1
    with pytest.raises(ParseError) as info:
        read_problem(path)
    assert info.value.line == line
    assert main(["optimize", "-i", path, "-o", str(tmp_path)]) == EXIT_PARSE
    assert f"bad.ini:{line}:" in capsys.readouterr().err


def test_unknown_search_key_is_parse_error(tmp_path):
    path = write(tmp_path, "s.ini", GAS_SINGLE + "speed = 3\n")
    with pytest.raises(ParseError) as info:
        read_problem(path)
    assert info.value.line == len(GAS_SINGLE.splitlines()) + 1


def test_missing_file_and_missing_input(tmp_path):
    assert main(["optimize", "-i", str(tmp_path / "nope.ini")]) == EXIT_PARSE
    assert main(["optimize"]) == EXIT_PARSE


def test_inadmissible_selectivity_rejected(tmp_path):
    text = problem_to_ini(case(12)).replace("v_b = 0.0001215", "v_b = 0.0003699").replace(
        "selectivity = 50.0", "selectivity = 1.5")
    path = write(tmp_path, "s.ini", text)
    with pytest.raises(ParseError) as info:
        read_problem(path)
    assert info.value.line == text.splitlines().index("selectivity = 1.5") + 1
    assert main(["optimize", "-i", path]) == EXIT_PARSE


def test_infeasible_optimize_exit_code(tmp_path):
    path = write(tmp_path, "g.ini", GAS_SINGLE)
    assert main(["optimize", "-i", path, "-o", str(tmp_path), "--config", "F1|B|N"]) == EXIT_INFEASIBLE


def test_sweep_all_inadmissible_is_infeasible(tmp_path):
    path = write(tmp_path, "g.ini", GAS_SINGLE)
    assert main(["sweep", "-i", path, "-o", str(tmp_path), "--values", "0.5,0.8"]) == EXIT_INFEASIBLE
    header, *_ = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert header[0] == "selectivity"


def test_sweep_needs_values(tmp_path):
    path = write(tmp_path, "g.ini", GAS_SINGLE)
    assert main(["sweep", "-i", path, "-o", str(tmp_path)]) == EXIT_PARSE


def test_optimize_single_stage_outputs(tmp_path):
    text = (GAS_SINGLE.replace("y_per = 0.98", "y_per = 0.6").replace("recovery = 0.9", "recovery = 0.6")
            .replace("selectivity = 2.0", "selectivity = 10.0").replace("u_up = 3", "u_up = 9"))
    path = write(tmp_path, "g.ini", text)
    assert main(["optimize", "-i", path, "-o", str(tmp_path), "--config", "F1|B|N", "--seed", "3"]) == EXIT_OK
    report = (tmp_path / "optimize_report.txt").read_text()
    assert report.startswith("configuration     F1|B|N")
    kv = _key_values(tmp_path / "optimize_state.txt")
    assert abs(float(kv["permeate_purity"]) - 0.6) <= 1e-4
    rows = list(csv.DictReader(open(tmp_path / "configurations.csv")))
    assert len(rows) == 1 and rows[0]["feasible"] == "1"


def test_line_diagnostics_with_commented_header(tmp_path):
    text = problem_to_ini(case(12)).replace("[pressure]", "[pressure]    # bar").replace("u_up = 107", "u_up = high")
    path = write(tmp_path, "c.ini", text)
    with pytest.raises(ParseError) as info:
        read_problem(path)
    assert info.value.line == text.splitlines().index("u_up = high") + 1

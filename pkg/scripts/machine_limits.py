"""Power cost of limiting intermediate compressors or pumps.

Case 8 with at most one machine and Case 12 with at most two, each against
its unconstrained four-stage optimum; Case 12 is also solved with three
stages.

    python scripts/machine_limits.py
"""

from memcascade.cases import case
from memcascade.optimizer import SearchSettings, solve_problem


def show(tag, rep, ref=None):
    extra = f"  (+{100 * (rep.power / ref.power - 1):.2f}%)" if ref else ""
    print(f"{tag:<22}{rep.power / 1e3:10.2f} kW  {rep.config.encode():<18} "
          f"machines {rep.machines}  active stages {rep.active_stages}{extra}")


def main():
    settings = SearchSettings.from_env()
    free8 = solve_problem(case(8), settings)
    show("case 8", free8)
    show("case 8, M = 1", solve_problem(case(8), settings, machines=1), free8)
    free12 = solve_problem(case(12), settings)
    show("case 12", free12)
    show("case 12, M = 2", solve_problem(case(12), settings, machines=2), free12)
    show("case 12, N = 3", solve_problem(case(12, n_stages=3), settings), free12)


if __name__ == "__main__":
    main()

"""Print the expected utility of the headline strategies for every shipped example."""

from ddtep import corpus, load
from ddtep.engine import eu_fast, strategy_from_assignment
from ddtep.solver import solve_exhaustive
from ddtep.cli import parse_assignments

TABLE = {
    "car": ["run_into_wall", "carmageddon"],
    "cake": ["bake_cake", "kill", "ask,informed_bake,informed_kill"],
    "cake_people": ["kill", "ask,informed_bake,informed_kill"],
    "cake_likes": ["bake_cake", "ask,informed_bake,informed_kill"],
    "cake_likes_expensive_ask": ["kill", "ask,informed_bake,informed_kill"],
    "burning_room": ["long", "short", "ask"],
    "archives": ["give(carol,area51),give(ann,stamps)"],
}


def main():
    for name, rows in TABLE.items():
        gp = load(corpus.read(name))
        print(name)
        for row in rows:
            s = strategy_from_assignment(gp, parse_assignments([row]))
            print(f"  {row:<40} {eu_fast(gp, s).total:12.6f}")
        best = solve_exhaustive(gp)
        print(f"  optimum: {best.best.strategy.describe(gp)} -> {best.best.total:.6f} ({best.explored} admissible)")


if __name__ == "__main__":
    main()

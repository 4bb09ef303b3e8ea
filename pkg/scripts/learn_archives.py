"""Fit the archive model to the impact observations and re-solve with the fitted values."""

import argparse

from ddtep import corpus, load
from ddtep.learner import em_fit, parse_dataset
from ddtep.solver import solve_exhaustive
from ddtep.syntax import desugar, parse_program

FIXED = {"p0": 1.0, "p1": 0.99999999, "p2": 0.30399904, "p3": 0.39326198, "p4": 0.50403522}


def report(label, gp):
    sol = solve_exhaustive(gp)
    print(f"{label}: EU {sol.best.total:.6f}")
    for tie in sol.ties:
        print(f"  {tie.strategy.describe(gp)}  {tie.total:.9f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iters", type=int, default=100)
    args = ap.parse_args()

    text = corpus.read("archives_learn")
    fit = em_fit(desugar(parse_program(text)), parse_dataset(corpus.read("impact_evidence")),
                 max_iters=args.max_iters, seed=args.seed)
    print(f"EM: {fit.iterations} iterations, converged={fit.converged}")
    for i, ll in enumerate(fit.trace):
        print(f"  LL[{i}] = {ll:.6f}")
    for k, v in fit.params.items():
        print(f"  {k} = {v:.8f}")

    base = load(text)
    report("declared values", base)
    report("fitted values", base.with_params(fit.params))
    report("reference values", base.with_params(FIXED))


if __name__ == "__main__":
    main()

"""Lanczos estimates of kappa(P (eps A + C)) for the multilevel preconditioners.

    python scripts/condition_numbers.py --eps 1e-1,1e-3,1e-6 --levels 3-6
"""

import argparse

from rdspls.cli import parse_eps, parse_levels
from rdspls.mesh import build_hierarchy
from rdspls.multilevel import MultilevelContext, estimate_condition, make_preconditioner
from rdspls.problems import C_MAX, C_MIN


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", default="1e-1,1e-3,1e-6")
    ap.add_argument("--levels", default="3-6")
    ap.add_argument("--precond", default="sbvp", choices=["sbvp", "sbvp-diag", "bvp", "mg-gs"])
    ap.add_argument("--mesh", default="uniform", choices=["uniform", "shishkin"])
    ap.add_argument("--weight", default="l2", choices=["l2", "reaction"])
    ap.add_argument("--steps", type=int, default=120, help="CG steps feeding the Lanczos estimate")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    c_star = C_MIN if args.weight == "l2" else C_MAX
    print("eps,level,kappa")
    for eps in parse_eps(args.eps):
        for J in parse_levels(args.levels):
            H = build_hierarchy(J, args.mesh, eps if args.mesh == "shishkin" else None, C_MIN if args.mesh == "shishkin" else None)
            ctx = MultilevelContext(H, eps, c_star, weight=args.weight)
            P = make_preconditioner(args.precond, ctx)
            kappa = estimate_condition(ctx.level_operator(J), P, steps=args.steps, seed=args.seed)
            print(f"{eps:g},{J},{kappa:.4g}", flush=True)


if __name__ == "__main__":
    main()

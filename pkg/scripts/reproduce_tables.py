"""Regenerate the three convergence tables and write them next to each other.

    python scripts/reproduce_tables.py --levels 1-6 --outdir results/
"""

import argparse
from pathlib import Path

from rdspls.cli import PRESETS, ExperimentConfig, emit_table, parse_levels, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", default="1-6")
    ap.add_argument("--tables", default="table1,table2,table3")
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.tables.split(","):
        cfg = ExperimentConfig(**PRESETS[name], levels=parse_levels(args.levels), jobs=args.jobs)
        rows = run_experiment(cfg)
        (out / f"{name}.csv").write_text(emit_table(rows, "csv"))
        md = emit_table(rows, "markdown")
        (out / f"{name}.md").write_text(md)
        print(f"## {name}\n\n{md}")
        for r in rows:
            if not r.ok:
                print(f"  eps={r.eps:g} level={r.level}: {r.failure}")


if __name__ == "__main__":
    main()

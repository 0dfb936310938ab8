"""Command-line benchmark driver.

Runs the full preconditioning pipeline on one or more Matrix Market files
and reports the usual metrics (density, condition estimate, minimizer norm,
iteration count).  Exit code 0 means every run converged, 2 that some run
hit the iteration cap, 3 that the solver broke down, 1 that a pipeline
stage failed.
"""

from __future__ import annotations

import argparse
import sys

from .bench import ExperimentConfig, emit_report, run_experiment


def build_parser():
    p = argparse.ArgumentParser(
        prog="diafact",
        description="Approximate inverse factoring preconditioner benchmark",
    )
    p.add_argument("--matrix", nargs="+", required=True, help="Matrix Market file(s)")
    p.add_argument("--method", choices=["diaf-q", "diaf-s"], default="diaf-q")
    p.add_argument("--v-shape", choices=["block-diag", "block-upper"], default="block-diag")
    p.add_argument("--max-block", type=int, default=50, help="diagonal block size cap")
    p.add_argument("--kv", type=int, default=0,
                   help="entries kept per column of V (0: structure of A in the shape)")
    p.add_argument("--neumann-k", type=int, default=3, help="power series truncation")
    p.add_argument("--tau-i", type=float, default=0.1, help="initial drop tolerance")
    p.add_argument("--p-i", type=int, default=0, help="initial drop count (0: unused)")
    p.add_argument("--tau-l", type=float, default=0.0, help="per-level drop tolerance")
    p.add_argument("--p-l", type=int, default=0, help="per-level drop count (0: unused)")
    p.add_argument("--stab-threshold", type=float, default=0.0,
                   help="stabilize columns with |v_jj| below this (0: off)")
    p.add_argument("--stab-r", type=float, default=2.0, help="imposed diagonal weight")
    p.add_argument("--tol", type=float, default=1e-8, help="relative residual target")
    p.add_argument("--maxit", type=int, default=1000, help="iteration cap")
    p.add_argument("--out", default=None, help="report file path")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    rows = []
    for path in args.matrix:
        try:
            cfg = ExperimentConfig(
                matrix=path,
                method=args.method,
                v_shape=args.v_shape,
                max_block=args.max_block,
                k_v=args.kv,
                neumann_k=args.neumann_k,
                tau_i=args.tau_i,
                p_i=args.p_i,
                tau_l=args.tau_l,
                p_l=args.p_l,
                stab_threshold=args.stab_threshold,
                stab_r=args.stab_r,
                tol=args.tol,
                maxit=args.maxit,
            )
        except ValueError as exc:
            print(f"invalid configuration: {exc}", file=sys.stderr)
            return 1
        row = run_experiment(cfg)
        rows.append(row)
        if row.status == "error":
            print(f"{row.problem}: failed in stage '{row.error_stage}': "
                  f"{row.error_message}", file=sys.stderr)
        else:
            print(
                f"{row.problem}: n={row.n} blocks={row.n_blocks} "
                f"rho={row.rho:.2f} kappa={row.kappa_v:.2e} nrm={row.nrm:.2f} "
                f"its={row.its} status={row.status}"
            )

    text = emit_report(rows, fmt=args.format, path=args.out)
    if args.out is None:
        print(text, end="")

    statuses = [r.status for r in rows]
    if "error" in statuses:
        return 1
    if "breakdown" in statuses:
        return 3
    if "no_convergence" in statuses:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

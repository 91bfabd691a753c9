import argparse
import logging
import math

import pandas as pd

from driftguard.errors import NumericalError
from driftguard.queue import CellSpec
from driftguard.services.deployment_eval import chain_violations
from driftguard.services.experiments import evaluate_checkpoint
from driftguard.services.harness import load_context
from driftguard.services.mlp import load_checkpoint
from driftguard.storage import get_store

logger = logging.getLogger(__name__)

REPORT_FILE = "bound_verification.csv"
RECOMPUTE_REL_TOL = 1e-9
RECOMPUTED_FIELDS = ("volatility", "derivative_energy", "jv_energy", "b_v", "b_rho")


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("verify-bounds", help="Check the bound chain for every cell of a run")
    parser.add_argument("--run", required=True, help="Run directory written by `driftguard run`")
    parser.add_argument(
        "--recompute",
        action="store_true",
        help="Re-evaluate stored checkpoints and compare against the saved bound reports",
    )
    parser.set_defaults(handler=handle)


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=RECOMPUTE_REL_TOL, abs_tol=1e-300)


def handle(args: argparse.Namespace) -> int:
    store = get_store(args.run, must_exist=True)
    config = store.read_config()
    summaries = store.read_summaries()
    ctx = load_context(config) if args.recompute else None

    rows = []
    for summary in summaries:
        report = summary.bounds
        problems = chain_violations(report, config.mc_tolerance)
        row = {
            "cell_id": summary.cell_id,
            "method": summary.method,
            "lambda": summary.lambda_,
            "volatility": report.volatility,
            "poincare_rhs": report.poincare_rhs,
            "jv_rhs": report.jv_rhs,
            "lowrank_rhs": report.lowrank_rhs,
            "beta_empirical": report.beta_empirical,
            "holds_poincare": report.holds_poincare,
            "holds_jv": report.holds_jv,
            "holds_lowrank": report.holds_lowrank,
            "chain_ok": not problems,
            "violations": "; ".join(problems),
            "reproduced": None,
        }
        if ctx is not None and summary.checkpoint_path:
            spec = CellSpec(config.experiment, summary.seed, summary.method, summary.lambda_, summary.subspace, summary.angle_deg)
            _, fresh = evaluate_checkpoint(ctx, load_checkpoint(store.resolve(summary.checkpoint_path)), spec)
            row["reproduced"] = all(_close(getattr(fresh, f), getattr(report, f)) for f in RECOMPUTED_FIELDS)
        rows.append(row)

    frame = pd.DataFrame(rows)
    store.write_table(REPORT_FILE, frame)
    failed = frame.loc[~frame["chain_ok"], "cell_id"].tolist()
    not_reproduced = frame.loc[frame["reproduced"] == False, "cell_id"].tolist()  # noqa: E712
    print(f"{len(frame) - len(failed)}/{len(frame)} cells satisfy the bound chain; report in {store.resolve(REPORT_FILE)}")

    if not_reproduced:
        raise NumericalError(f"stored bound reports differ from re-evaluation for {not_reproduced}")
    if failed and config.is_real:
        # Real-data velocities are block-mean proxies and β is empirical: violations are diagnostics.
        logger.warning("bound chain fails on %d real-data cells (diagnostic only)", len(failed))
        return 0
    if failed:
        raise NumericalError(f"bound chain violated for {failed}")
    return 0

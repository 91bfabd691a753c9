import argparse
import logging
from pathlib import Path

from driftguard.errors import ShapeError
from driftguard.services.experiments import monitoring_blocks
from driftguard.services.harness import load_context
from driftguard.services.mlp import load_checkpoint
from driftguard.services.monitoring import decomposition_table, hazard_trace, spearman_vs_risk_movement
from driftguard.storage import get_store

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("monitor", help="Hazard trace and rank-1 decomposition for one frozen model")
    parser.add_argument("--run", required=True, help="Run directory the model belongs to")
    parser.add_argument("--model", required=True, help="Checkpoint file")
    parser.add_argument("--seed", type=int, default=None, help="Deployment seed (synthetic runs; default from the run summary)")
    parser.add_argument("--blocks", type=int, default=20, help="Blocks cut from a synthetic path")
    parser.set_defaults(handler=handle)


def _seed_for(store, checkpoint: Path, fallback: int) -> int:
    for summary in store.read_summaries():
        if summary.checkpoint_path and store.resolve(summary.checkpoint_path).resolve() == checkpoint.resolve():
            return summary.seed
    return fallback


def handle(args: argparse.Namespace) -> int:
    store = get_store(args.run, must_exist=True)
    config = store.read_config()
    checkpoint = Path(args.model)
    model = load_checkpoint(checkpoint)
    ctx = load_context(config)
    seed = args.seed if args.seed is not None else _seed_for(store, checkpoint, config.seeds[0])

    blocks, risk = monitoring_blocks(ctx, model, seed, args.blocks)
    trace = hazard_trace(model, blocks)
    reference = ctx.primary_subspace.basis[:, 0]
    decomposition = decomposition_table(model, blocks, reference)

    stem = checkpoint.stem
    hazard_path = store.write_table(f"monitor/{stem}_hazard.csv", trace.to_frame())
    store.write_table(f"monitor/{stem}_decomposition.csv", decomposition)
    print(f"hazard trace: {hazard_path} ({int(trace.valid.sum())}/{len(trace)} valid blocks)")

    for column in ("h", "roll3_h"):
        try:
            rho = spearman_vs_risk_movement(trace.per_block(column), risk.values)
        except ShapeError as exc:
            logger.warning("no correlation for %s: %s", column, exc.detail)
            continue
        print(f"spearman({column}, next-block squared risk change) = {rho:.3f}")
    return 0

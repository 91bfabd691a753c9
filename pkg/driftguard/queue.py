import logging
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

from driftguard.errors import CellFailure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CellSpec:
    """One independent training + evaluation job of an experiment."""

    experiment: str
    seed: int
    method: str
    lambda_: float
    subspace: str
    angle_deg: Optional[float] = None

    @property
    def cell_id(self) -> str:
        return build_cell_id(self.method, self.lambda_, self.seed, self.subspace, self.angle_deg)

    @property
    def sort_key(self) -> tuple:
        return (self.method, self.subspace, self.angle_deg if self.angle_deg is not None else -1.0, self.lambda_, self.seed)


def build_cell_id(method: str, lambda_: float, seed: int, subspace: str, angle_deg: Optional[float] = None) -> str:
    parts = [method, subspace]
    if angle_deg is not None:
        parts.append(f"a{angle_deg:g}")
    parts.append(f"l{lambda_:g}")
    parts.append(f"s{seed:03d}")
    return "_".join(parts)


def _run_one(worker: Callable[[Any, CellSpec], Any], context: Any, spec: CellSpec) -> Any:
    try:
        return worker(context, spec)
    except CellFailure:
        raise
    except Exception as exc:
        raise CellFailure(spec.cell_id, exc) from exc


def run_cells(
    specs: Sequence[CellSpec],
    worker: Callable[[Any, CellSpec], Any],
    context: Any,
    workers: int = 1,
) -> list[Any]:
    """
    Execute every cell and return results in cell-key order.
    The first failing cell aborts the queue and surfaces as CellFailure with its id.
    """
    ordered = sorted(specs, key=lambda spec: spec.sort_key)
    ids = [spec.cell_id for spec in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("cell ids must be unique")

    if workers <= 1 or len(ordered) <= 1:
        return [_run_one(worker, context, spec) for spec in ordered]

    results: dict[str, Any] = {}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(_run_one, worker, context, spec): spec for spec in ordered}
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        for future in done:
            error = future.exception()
            if error is not None:
                for other in pending:
                    other.cancel()
                logger.error("Cell %s failed; cancelling %d pending cells", futures[future].cell_id, len(pending))
                raise error
            results[futures[future].cell_id] = future.result()
    return [results[cell_id] for cell_id in ids]

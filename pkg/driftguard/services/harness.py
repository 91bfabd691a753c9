"""
Experiment orchestration: cell sweeps, λ selection, paired seed comparisons and the report files
a run directory carries.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

import driftguard
from driftguard.errors import ConfigError, DataError, ShapeError
from driftguard.models import (
    DEFAULT_DATA_FILES,
    CellSummary,
    ExperimentConfig,
    PairedComparison,
    SelectedLambda,
)
from driftguard.queue import run_cells
from driftguard.services.datasets import BlockedSeries, load_series, write_cache
from driftguard.services.experiments import (
    RATIO_METRICS,
    CellResult,
    ExperimentContext,
    build_context,
    misspecification_report,
    plan_cells,
    run_cell,
)
from driftguard.services.monitoring import bootstrap_spearman_difference, spearman_ablation
from driftguard.settings import get_settings
from driftguard.storage import SUMMARY_FILE, RunStore, get_store, summaries_to_frame
from driftguard.utils.hashing import short_hash
from driftguard.utils.rng import substream
from driftguard.utils.time import elapsed_ms, now_ms

logger = logging.getLogger(__name__)

TIE_REL_TOL = 1e-6
REAL_PAIRED_METRICS = ("deploy_risk", "volatility")
TABLE_METRICS = ("deploy_risk", "volatility", "derivative_energy", "directional_gain", "terminal_risk")


def select_lambda(
    summaries: Sequence[CellSummary],
    method: str,
    subspace: Optional[str] = None,
    angle_deg: Optional[float] = None,
) -> SelectedLambda:
    """
    λ with the lowest mean validation loss across seeds. Losses within a relative 1e-6 of the
    best count as tied; ties go to the smaller validation gain, then to the smaller λ.
    """
    rows = [
        s
        for s in summaries
        if s.method == method
        and (subspace is None or s.subspace == subspace)
        and (angle_deg is None or s.angle_deg == angle_deg)
    ]
    if not rows:
        raise ConfigError(f"no cells to select lambda from for method '{method}'")
    candidates = []
    for lam in sorted({s.lambda_ for s in rows}):
        members = [s for s in rows if s.lambda_ == lam]
        candidates.append(
            (
                float(np.mean([s.val_loss for s in members])),
                float(np.mean([s.val_gain for s in members])),
                lam,
            )
        )
    best = min(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] - best <= TIE_REL_TOL * abs(best)]
    val_loss, val_gain, lam = min(tied, key=lambda c: (c[1], c[2]))
    return SelectedLambda(method=method, lambda_=lam, mean_val_loss=val_loss, mean_val_gain=val_gain)


def paired_comparison(
    a: Sequence[float],
    b: Sequence[float],
    n_boot: int = 10_000,
    seed: int = 0,
    metric: str = "",
    method_a: str = "a",
    method_b: str = "b",
) -> PairedComparison:
    """Strict win count of a over b, mean paired difference and its seed-bootstrap 95% CI."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired samples must have equal length, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ShapeError("paired comparison needs at least one seed")
    diffs = a - b
    rng = substream(seed, "bootstrap")
    picks = rng.integers(0, diffs.size, size=(n_boot, diffs.size))
    boot_means = diffs[picks].mean(axis=1)
    ci_low, ci_high = np.percentile(boot_means, [2.5, 97.5])
    return PairedComparison(
        metric=metric,
        method_a=method_a,
        method_b=method_b,
        n=int(diffs.size),
        wins=int(np.sum(a < b)),
        mean_diff=float(diffs.mean()),
        ci_low=float(ci_low),
        ci_high=float(ci_high),
    )


def _cells_at(summaries: Iterable[CellSummary], method: str, lambda_: float, subspace: Optional[str] = None) -> dict[int, CellSummary]:
    return {
        s.seed: s
        for s in summaries
        if s.method == method and s.lambda_ == lambda_ and (subspace is None or s.subspace == subspace) and s.angle_deg is None
    }


def _paired_rows(
    a_cells: dict[int, CellSummary],
    b_cells: dict[int, CellSummary],
    metrics: Sequence[str],
    config: ExperimentConfig,
    method_a: str,
    method_b: str,
) -> list[PairedComparison]:
    seeds = sorted(set(a_cells) & set(b_cells))
    if not seeds:
        return []
    return [
        paired_comparison(
            [getattr(a_cells[s], metric) for s in seeds],
            [getattr(b_cells[s], metric) for s in seeds],
            n_boot=config.bootstrap_samples,
            seed=config.bootstrap_seed,
            metric=metric,
            method_a=method_a,
            method_b=method_b,
        )
        for metric in metrics
    ]


def _describe(members: Sequence[CellSummary], metrics: Sequence[str]) -> dict:
    row: dict = {"n": len(members)}
    for metric in metrics:
        values = np.array([getattr(s, metric) for s in members])
        row[f"{metric}_mean"] = float(values.mean())
        row[f"{metric}_sd"] = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return row


def load_experiment_series(config: ExperimentConfig) -> Optional[BlockedSeries]:
    if not config.is_real:
        return None
    path = Path(config.data_path) if config.data_path else get_settings().data_dir / DEFAULT_DATA_FILES[config.experiment]
    if not path.is_file():
        raise DataError(f"dataset file {path} not found; run `driftguard fetch-data --dataset {config.experiment} --download`")
    return load_series(config.experiment, path)


@dataclass
class RunReport:
    """Everything aggregated from a finished sweep, ready to be written to a run directory."""

    summaries: list[CellSummary]
    selected: list[dict] = field(default_factory=list)
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


class ExperimentHarness:
    def run_dir(self, config: ExperimentConfig) -> Path:
        if config.output_dir:
            return Path(config.output_dir)
        digest = short_hash(json.dumps(config.model_dump(mode="json", by_alias=True), sort_keys=True))
        return get_settings().runs_dir / f"{config.experiment}-{digest}"

    def _store_results(self, store: RunStore, config: ExperimentConfig, results: list[CellResult]) -> list[CellSummary]:
        summaries = []
        for result in results:
            cell_id = result.spec.cell_id
            update: dict = {}
            store.write_bounds(cell_id, result.summary.bounds)
            if result.hazard is not None:
                update["hazard_path"] = store.write_hazard(cell_id, result.hazard)
            if config.save_checkpoints:
                update["checkpoint_path"] = store.write_checkpoint(cell_id, result.checkpoint)
            summaries.append(result.summary.model_copy(update=update))
        return summaries

    def _selection(self, config: ExperimentConfig, summaries: list[CellSummary]) -> list[tuple[SelectedLambda, Optional[str]]]:
        picks = []
        for method in config.methods:
            if method == "dtr" and config.is_real:
                picks.extend((select_lambda(summaries, method, subspace=kind), kind) for kind in config.dtr_subspaces)
            elif method == "dtr" and config.experiment == "misspecification":
                continue
            else:
                picks.append((select_lambda(summaries, method), None))
        return picks

    def _method_table(self, config: ExperimentConfig, summaries: list[CellSummary]) -> pd.DataFrame:
        # Regularized methods average over the nonzero-λ sweep; standard is a single config.
        rows = []
        for method in config.methods:
            members = [s for s in summaries if s.method == method and (method == "standard" or s.lambda_ > 0)]
            if config.experiment == "misspecification" and method == "dtr":
                for angle in sorted({s.angle_deg for s in members}):
                    group = [s for s in members if s.angle_deg == angle]
                    rows.append({"method": method, "angle_deg": angle, "aggregation": "nonzero_lambda_sweep", **_describe(group, TABLE_METRICS)})
                continue
            if not members:
                continue
            aggregation = "single_config" if method == "standard" else "nonzero_lambda_sweep"
            rows.append({"method": method, "angle_deg": None, "aggregation": aggregation, **_describe(members, TABLE_METRICS)})
        return pd.DataFrame(rows)

    def _selected_table(self, selected: list[tuple[SelectedLambda, Optional[str]]], summaries: list[CellSummary]) -> pd.DataFrame:
        rows = []
        for pick, subspace in selected:
            members = list(_cells_at(summaries, pick.method, pick.lambda_, subspace).values())
            label = subspace or ("none" if pick.method == "standard" else "identity")
            rows.append({"method": pick.method, "subspace": label, "lambda": pick.lambda_, **_describe(members, TABLE_METRICS)})
        return pd.DataFrame(rows)

    def _comparisons(self, config: ExperimentConfig, summaries: list[CellSummary], selected: dict[tuple[str, Optional[str]], float]) -> list[PairedComparison]:
        if "dtr" not in config.methods:
            return []
        if config.is_real:
            dtr = _cells_at(summaries, "dtr", selected[("dtr", config.subspace)], config.subspace)
            metrics = REAL_PAIRED_METRICS
            lam_for = lambda method: selected[(method, None)]  # noqa: E731
        elif config.experiment == "directional_vs_isotropic":
            dtr = _cells_at(summaries, "dtr", config.matched_lambda)
            metrics = RATIO_METRICS
            lam_for = lambda method: 0.0 if method == "standard" else config.matched_lambda  # noqa: E731
        else:
            return []
        rows: list[PairedComparison] = []
        for baseline in ("standard", "isotropic"):
            if baseline in config.methods:
                rows.extend(_paired_rows(dtr, _cells_at(summaries, baseline, lam_for(baseline)), metrics, config, "dtr", baseline))
        return rows

    def _matched_ratios(self, config: ExperimentConfig, summaries: list[CellSummary]) -> list[dict]:
        standard = [s for s in summaries if s.method == "standard"]
        if not standard:
            return []
        rows = []
        for method in ("isotropic", "dtr"):
            members = [s for s in summaries if s.method == method and s.lambda_ == config.matched_lambda]
            if not members:
                logger.warning("no %s cells at matched lambda %g; skipping ratio bars", method, config.matched_lambda)
                continue
            for metric in RATIO_METRICS:
                base = float(np.mean([getattr(s, metric) for s in standard]))
                value = float(np.mean([getattr(s, metric) for s in members]))
                rows.append({"panel": "matched_lambda", "label": method, "metric": metric, "ratio": value / base if base > 0 else float("nan")})
        return rows

    def _monitoring(self, config: ExperimentConfig, results: list[CellResult], lam: float) -> tuple[Optional[pd.DataFrame], Optional[dict]]:
        picked = [
            r for r in results
            if r.spec.method == "dtr" and r.spec.lambda_ == lam and r.spec.subspace == config.subspace and r.hazard is not None
        ]
        if not picked:
            return None, None
        traces = [r.hazard for r in picked]
        risks = [r.risk.values for r in picked]
        try:
            table = pd.DataFrame([res.model_dump() for res in spearman_ablation(traces, risks)])
            point, low, high = bootstrap_spearman_difference(
                [(t.per_block("roll2_h"), r) for t, r in zip(traces, risks)],
                [(t.per_block("s2"), r) for t, r in zip(traces, risks)],
                n_boot=config.bootstrap_samples,
                seed=config.bootstrap_seed,
            )
        except ShapeError as exc:
            logger.warning("monitoring correlations skipped: %s", exc.detail)
            return None, None
        return table, {"score_a": "roll2_hazard", "score_b": "drift_only_s2", "difference": point, "ci_low": low, "ci_high": high, "lambda": lam}

    def _subspace_ablation(self, config: ExperimentConfig, summaries: list[CellSummary], selected: dict) -> pd.DataFrame:
        standard = _cells_at(summaries, "standard", 0.0)
        rows = []
        for kind in config.dtr_subspaces:
            lam = selected[("dtr", kind)]
            dtr = _cells_at(summaries, "dtr", lam, kind)
            seeds = sorted(set(dtr) & set(standard))
            row = {"subspace": kind, "lambda": lam, **_describe(list(dtr.values()), ("deploy_risk", "volatility", "directional_gain"))}
            row["wins_mse"] = sum(dtr[s].deploy_risk < standard[s].deploy_risk for s in seeds)
            row["wins_volatility"] = sum(dtr[s].volatility < standard[s].volatility for s in seeds)
            rows.append(row)
        return pd.DataFrame(rows)

    def aggregate(self, config: ExperimentConfig, results: list[CellResult], summaries: list[CellSummary]) -> RunReport:
        report = RunReport(summaries=summaries)
        picks = self._selection(config, summaries)
        selected = {(p.method, sub): p.lambda_ for p, sub in picks}
        report.selected = [{**p.model_dump(by_alias=True), "subspace": sub} for p, sub in picks]

        report.tables["table_methods.csv"] = self._method_table(config, summaries)
        if config.is_real:
            report.tables["table_selected.csv"] = self._selected_table(picks, summaries)
        comparisons = self._comparisons(config, summaries, selected)
        report.tables["paired_comparisons.csv"] = pd.DataFrame(
            [c.model_dump() for c in comparisons], columns=list(PairedComparison.model_fields)
        )

        report.tables["fig2_scatter.csv"] = pd.DataFrame(
            [
                {
                    "cell_id": s.cell_id,
                    "method": s.method,
                    "lambda": s.lambda_,
                    "volatility": s.volatility,
                    "poincare_rhs": s.bounds.poincare_rhs,
                    "jv_rhs": s.bounds.jv_rhs,
                }
                for s in summaries
            ]
        )
        report.tables["fig4_risk_curves.csv"] = pd.DataFrame(
            [
                {"cell_id": r.spec.cell_id, "method": r.spec.method, "lambda": r.spec.lambda_, "seed": r.spec.seed, "time": float(t), "risk": float(v)}
                for r in results
                for t, v in zip(r.risk.times, r.risk.values)
            ]
        )

        ratio_rows = []
        if config.experiment == "directional_vs_isotropic":
            ratio_rows = self._matched_ratios(config, summaries)
        elif config.experiment == "misspecification":
            misspec = misspecification_report(summaries, config.matched_lambda)
            report.tables["misspecification_ratios.csv"] = pd.DataFrame(misspec)
            ratio_rows = [
                {"panel": "misspecification", "label": row["label"], "metric": metric, "ratio": row[metric]}
                for row in misspec
                for metric in RATIO_METRICS
            ]
        if ratio_rows:
            report.tables["fig3_ratios.csv"] = pd.DataFrame(ratio_rows)

        if config.is_real and "dtr" in config.methods:
            spearman, bootstrap = self._monitoring(config, results, selected[("dtr", config.subspace)])
            if spearman is not None:
                report.tables["monitoring_spearman.csv"] = spearman
                report.metadata["monitoring_bootstrap"] = bootstrap
            report.tables["subspace_ablation.csv"] = self._subspace_ablation(config, summaries, selected)
        return report

    def run(self, config: ExperimentConfig, workers: Optional[int] = None) -> Path:
        started = now_ms()
        store = get_store(self.run_dir(config))
        series = load_experiment_series(config)
        ctx: ExperimentContext = build_context(config, series)
        store.write_config(config)
        if series is not None:
            write_cache(series, store.resolve("data/cleaned.csv"))
        for kind, subspace in sorted(ctx.subspaces.items()):
            store.write_table(f"subspaces/{kind}.csv", pd.DataFrame(subspace.basis, columns=[f"v{i + 1}" for i in range(subspace.rank)]))

        specs = plan_cells(config)
        n_workers = workers or config.workers or get_settings().workers
        logger.info("Running %d cells of %s with %d workers into %s", len(specs), config.experiment, n_workers, store.root)
        results = run_cells(specs, run_cell, ctx, n_workers)

        summaries = self._store_results(store, config, results)
        store.write_table(SUMMARY_FILE, summaries_to_frame(summaries))
        report = self.aggregate(config, results, summaries)
        store.write_json("selected_lambda.json", report.selected)
        for name, table in sorted(report.tables.items()):
            store.write_table(name, table)

        store.write_json(
            "run_metadata.json",
            {
                "experiment": config.experiment,
                "n_cells": len(specs),
                "started_ms": started,
                "elapsed_ms": elapsed_ms(started),
                "versions": {"driftguard": driftguard.__version__, "numpy": np.__version__, "pandas": pd.__version__},
                "source_sha256": series.source_sha256 if series is not None else None,
                "subspaces": {
                    kind: {"singular_values": list(s.singular_values), "ridge_fallback": s.ridge_fallback}
                    for kind, s in sorted(ctx.subspaces.items())
                },
                **report.metadata,
            },
        )
        logger.info("Run %s finished in %d ms", store.root, elapsed_ms(started))
        return store.root


harness = ExperimentHarness()


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> Path:
    return harness.run(config, workers)


def load_context(config: ExperimentConfig) -> ExperimentContext:
    """Rebuild the data and subspaces of a stored run from its config alone."""
    return build_context(config, load_experiment_series(config))

import logging
from typing import List, Sequence

from command_modules.preprocess import available_axes, load_windows
from services.evaluation import (
    ORACLE,
    SUMMARY_KEYS,
    AxisData,
    EvalReport,
    FittedModel,
    SplitSpec,
    add_series,
    cross_validate,
    evaluate_fitted,
    score_on_shared_rows,
)
from utils.config import RunConfig
from utils.dataset_io import write_table
from utils.errors import EXIT_OK, TireForceError
from utils.model_io import load_model
from utils.run_manager import RunManager

logger = logging.getLogger(__name__)


def write_report(manager: RunManager, report: EvalReport, prefix: str) -> List[str]:
    """Summary, timings, text report and every plot-data series of a report"""
    manager.ensure_dir(manager.reports_dir)
    paths = []
    if report.results:
        paths.append(manager.report_path(f"{prefix}_summary.csv"))
        write_table(report.summary_rows(), paths[-1])
        # wall times vary between runs, so they live apart from the checksummed artifacts
        write_table(report.timing_rows(), manager.report_path(f"{prefix}_timings.csv"))
    for (method, axis), rows in sorted(report.series.items()):
        paths.append(manager.report_path(f"{prefix}_plot_{method}_{axis}.csv"))
        write_table(rows, paths[-1], columns=["sample_index", "measured_n", "estimated_n"])
    for (method, axis), rows in sorted(report.slip_series.items()):
        paths.append(manager.report_path(f"{prefix}_slip_{method}_{axis}.csv"))
        write_table(rows, paths[-1], columns=["slip_deg", "measured_n", "estimated_n"])
    if report.cv:
        paths.append(manager.report_path(f"{prefix}_folds.csv"))
        write_table(report.fold_rows(), paths[-1])
        for axis in sorted({axis for _, axis in report.cv}):
            paths.append(manager.report_path(f"{prefix}_boxplot_{axis}.csv"))
            write_table(report.boxplot_rows(axis), paths[-1], columns=["method", *SUMMARY_KEYS])

    paths.append(manager.report_path(f"{prefix}_report.txt"))
    with open(paths[-1], "w", encoding="utf-8") as fh:
        fh.write(report.text())
    return paths


def run_evaluate(config: RunConfig, methods: Sequence[str], axes: Sequence[str]) -> int:
    """Score saved models on the test part of the seeded split"""
    try:
        manager = RunManager(config)
        windows = load_windows(manager, config)
        spec = SplitSpec.from_config(config)
        report = EvalReport()
        for axis in available_axes(windows, list(axes)):
            data = AxisData.from_split(windows, axis, spec)
            results = []
            for method in methods:
                if method == ORACLE:
                    fitted = FittedModel(ORACLE, axis, None, data.stats)
                else:
                    fitted = load_model(manager.model_path(method, axis))
                result = evaluate_fitted(fitted, data.with_stats(fitted.stats), data.test,
                                         config.eval.nrms_literal)
                logger.info(f"{method} {axis}: test NRMS {result.nrms:.3f}%")
                results.append(result)
            score_on_shared_rows(results, data, config.eval.nrms_literal)
            for result in results:
                report.results.append(result)
                add_series(report, result, data)

        paths = write_report(manager, report, "evaluate")
        manager.write_manifest(manager.reports_dir, "evaluate", paths)
        manager.log_outputs(paths)
        return EXIT_OK
    except TireForceError as e:
        logger.error(f"Error evaluating models: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"Error writing report: {e}")
        return TireForceError.exit_code


def run_crossval(config: RunConfig, methods: Sequence[str], axes: Sequence[str]) -> int:
    """k-fold cross-validation of each method and axis, with boxplot statistics"""
    try:
        manager = RunManager(config)
        windows = load_windows(manager, config)
        report = EvalReport()
        # folds are scored on rows with full recurrent history whenever the RNN takes part
        history = config.rnn.sequence_length if "rnn" in methods and config.rnn.sequence_mode == "revolutions" else 0
        for axis in available_axes(windows, list(axes)):
            for method in methods:
                try:
                    report.cv[(method, axis)] = cross_validate(windows, axis, method, config, history)
                except TireForceError as e:
                    logger.error(f"Cross-validation of {method} on {axis} failed: {e}")

        paths = write_report(manager, report, "crossval")
        manager.write_manifest(manager.reports_dir, "crossval", paths, {"k": config.cv.k})
        manager.log_outputs(paths)
        return EXIT_OK
    except TireForceError as e:
        logger.error(f"Error cross-validating: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"Error writing report: {e}")
        return TireForceError.exit_code

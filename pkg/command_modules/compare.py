import logging
from typing import Sequence

from command_modules.evaluate import write_report
from command_modules.preprocess import available_axes, load_windows
from services.evaluation import AxisData, EvalReport, SplitSpec, compare_methods, extrapolation_study
from utils.config import RunConfig
from utils.errors import EXIT_OK, TireForceError
from utils.run_manager import RunManager

logger = logging.getLogger(__name__)


def run_compare(config: RunConfig, methods: Sequence[str], axes: Sequence[str], extrapolation: bool = False) -> int:
    """Train and score all methods on identical splits, or run the extrapolation study"""
    try:
        manager = RunManager(config)
        windows = load_windows(manager, config)
        spec = SplitSpec.from_config(config)
        report = EvalReport()
        for axis in available_axes(windows, list(axes)):
            if extrapolation:
                partial = extrapolation_study(windows, axis, config, methods)
                report.results.extend(partial.results)
                report.series.update(partial.series)
                report.slip_series.update(partial.slip_series)
            else:
                compare_methods(AxisData.from_split(windows, axis, spec), config, methods, report)

        prefix = "extrapolation" if extrapolation else "compare"
        paths = write_report(manager, report, prefix)
        failed = [f"{r.method}/{r.axis}" for r in report.results if r.status != "ok"]
        manager.write_manifest(manager.reports_dir, prefix, paths, {"methods": list(methods), "failed": failed})
        manager.log_outputs(paths)
        return EXIT_OK
    except TireForceError as e:
        logger.error(f"Error comparing methods: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"Error writing report: {e}")
        return TireForceError.exit_code

import os
import logging
from typing import List

from services.evaluation import SplitSpec, split_dataset
from services.preprocess import SignalPreprocessor, WindowSet, window_offsets
from utils.config import RunConfig
from utils.dataset_io import AXES, read_raw_dataset, read_windows, write_skipped, write_stats, write_windows
from utils.errors import EXIT_OK, DataError, TireForceError
from utils.run_manager import RunManager

logger = logging.getLogger(__name__)

MIN_AXIS_WINDOWS = 10


def load_windows(manager: RunManager, config: RunConfig) -> WindowSet:
    """Processed windows of the run, with the grid offsets of the configured window"""
    offsets = window_offsets(config.preprocess.window_span_deg, config.preprocess.grid_step_deg,
                             config.preprocess.window_mode)
    return read_windows(manager.windows_path(), offsets)


def available_axes(windows: WindowSet, requested: List[str]) -> List[str]:
    """Requested axes that have enough usable windows to split; others are skipped with a warning"""
    axes = []
    for axis in requested:
        n = len(windows.usable_for(axis))
        if n < MIN_AXIS_WINDOWS:
            logger.warning(f"Skipping {axis}: only {n} usable windows")
        else:
            axes.append(axis)
    if not axes:
        raise DataError(f"no axis among {requested} has {MIN_AXIS_WINDOWS} or more usable windows")
    return axes


def run_preprocess(config: RunConfig) -> int:
    """Turn the raw dataset into windows plus per-axis normalization stats"""
    try:
        manager = RunManager(config)
        traces = read_raw_dataset(manager.raw_dir)
        windows, skipped = SignalPreprocessor(config.preprocess).process_all(traces)
        if not windows:
            raise DataError("no trace produced a contact-patch window")
        window_set = WindowSet.from_windows(windows)

        manager.ensure_dir(manager.processed_dir)
        paths = [manager.windows_path()]
        write_windows(window_set, paths[0])
        skipped_path = os.path.join(manager.processed_dir, "skipped_traces.csv")
        write_skipped(skipped, skipped_path)
        paths.append(skipped_path)

        spec = SplitSpec.from_config(config)
        counts = {}
        for axis in AXES:
            usable = window_set.usable_for(axis)
            counts[axis] = len(usable)
            if len(usable) < MIN_AXIS_WINDOWS:
                logger.warning(f"No stats for {axis}: only {len(usable)} usable windows")
                continue
            train, _, _ = split_dataset(len(usable), spec)
            write_stats(usable.subset(train).fit_minmax(axis), axis, manager.stats_path(axis))
            paths.append(manager.stats_path(axis))

        manager.write_manifest(manager.processed_dir, "preprocess", paths, {
            "n_windows": len(window_set),
            "n_skipped": len(skipped),
            "usable_counts": counts,
        })
        manager.log_outputs(paths)
        return EXIT_OK
    except TireForceError as e:
        logger.error(f"Error preprocessing dataset: {e}")
        return e.exit_code

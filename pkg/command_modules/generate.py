import os
import logging

from services.simulator import TireSimulator, usable_counts
from utils.config import RunConfig
from utils.dataset_io import write_raw_dataset
from utils.errors import EXIT_OK, TireForceError
from utils.run_manager import RunManager

logger = logging.getLogger(__name__)


def run_generate(config: RunConfig) -> int:
    """Simulate the configured test schedule and write the raw dataset"""
    try:
        manager = RunManager(config)
        simulator = TireSimulator(config)
        schedule = simulator.build_schedule()
        schedule.validate()
        counts = usable_counts(schedule)
        logger.info(f"Schedule: {len(schedule.entries)} entries, {schedule.total_revolutions} revolutions, "
                    f"usable fx/fy/fz = {counts['fx']}/{counts['fy']}/{counts['fz']}")

        traces = simulator.generate(schedule)
        raw_dir = manager.ensure_dir(manager.raw_dir)
        paths = write_raw_dataset(traces, raw_dir)

        schedule_path = os.path.join(raw_dir, "schedule.json")
        with open(schedule_path, "w", encoding="utf-8") as fh:
            fh.write(schedule.to_json() + "\n")
        paths.append(schedule_path)

        manager.write_manifest(raw_dir, "generate", paths, {
            "schedule_hash": schedule.digest(),
            "n_traces": len(traces),
            "usable_counts": counts,
        })
        manager.log_outputs(paths)
        return EXIT_OK
    except TireForceError as e:
        logger.error(f"Error generating dataset: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"Error writing dataset: {e}")
        return TireForceError.exit_code

import logging
from dataclasses import asdict

from command_modules.preprocess import load_windows
from services.evaluation import AxisData, SplitSpec, fit_model
from utils.config import RunConfig
from utils.dataset_io import write_table
from utils.errors import EXIT_OK, TireForceError
from utils.model_io import save_model
from utils.run_manager import RunManager

logger = logging.getLogger(__name__)


def run_train(config: RunConfig, method: str, axis: str) -> int:
    """Train one method for one force axis on the training part of the seeded split"""
    try:
        manager = RunManager(config)
        windows = load_windows(manager, config)
        data = AxisData.from_split(windows, axis, SplitSpec.from_config(config))
        logger.info(f"Training {method} for {axis}: {len(data.train)} train, "
                    f"{len(data.validation)} validation windows")

        fitted = fit_model(method, data, config, config.seed)

        manager.ensure_dir(manager.models_dir)
        paths = [manager.model_path(method, axis)]
        save_model(fitted, paths[0])
        if fitted.history:
            paths.append(manager.history_path(method, axis))
            write_table(fitted.history, paths[-1])

        manager.write_manifest(manager.models_dir, f"train_{method}_{axis}", paths, {
            "method": method,
            "axis": axis,
            "n_train": int(len(data.train)),
            "hyperparameters": asdict(getattr(config, method)),
        })
        manager.log_outputs(paths)
        return EXIT_OK
    except TireForceError as e:
        logger.error(f"Error training {method} for {axis}: {e}")
        return e.exit_code

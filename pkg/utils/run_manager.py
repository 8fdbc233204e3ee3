import os
import json
import hashlib
import logging
from typing import Any, Dict, List, Optional, Sequence

from utils.config import RunConfig
from utils.errors import DataError

logger = logging.getLogger(__name__)

TOOL_NAME = "tireforce"
TOOL_VERSION = "1.0.0"


class RunManager:
    """Manages the output directory of one run: layout, manifests and checksums"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = config.out

    @property
    def raw_dir(self) -> str:
        return os.path.join(self.root, "raw")

    @property
    def processed_dir(self) -> str:
        return os.path.join(self.root, "processed")

    @property
    def models_dir(self) -> str:
        return os.path.join(self.root, "models")

    @property
    def reports_dir(self) -> str:
        return os.path.join(self.root, "reports")

    def windows_path(self) -> str:
        return os.path.join(self.processed_dir, "windows.csv")

    def stats_path(self, axis: str) -> str:
        return os.path.join(self.processed_dir, f"stats_{axis}.txt")

    def model_path(self, method: str, axis: str) -> str:
        return os.path.join(self.models_dir, f"{method}_{axis}.model")

    def history_path(self, method: str, axis: str) -> str:
        return os.path.join(self.models_dir, f"{method}_{axis}_history.csv")

    def report_path(self, name: str) -> str:
        return os.path.join(self.reports_dir, name)

    def ensure_dir(self, path: str) -> str:
        """Create a directory, mapping failures to a data error"""
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as e:
            raise DataError(f"cannot create output directory {path}: {e}")
        return path

    @staticmethod
    def checksum(path: str) -> str:
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
        return digest.hexdigest()

    def write_manifest(self, directory: str, command: str, files: Sequence[str],
                       extra: Optional[Dict[str, Any]] = None) -> str:
        """Manifest with seed, tool version, resolved config and file checksums; no timestamps"""
        manifest = {
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "command": command,
            "seed": self.config.seed,
            "config": self.config.to_flat_dict(),
            "files": {os.path.relpath(f, directory): self.checksum(f) for f in files},
        }
        manifest.update(extra or {})
        path = os.path.join(directory, f"manifest_{command}.json")
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as e:
            raise DataError(f"cannot write manifest {path}: {e}")
        logger.info(f"Manifest written to {path}")
        return path

    def read_manifest(self, directory: str, command: str) -> Dict[str, Any]:
        path = os.path.join(directory, f"manifest_{command}.json")
        if not os.path.exists(path):
            raise DataError(f"missing manifest {path}; run '{command}' first")
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def log_outputs(self, paths: List[str]):
        for path in paths:
            logger.info(f"Wrote {path}")

"""
Shared run-config resolution for the experiment tools.
"""

from pathlib import Path
from typing import Optional, Tuple

from config import config
from gradreg.runconfig import RunConfig


def load_run(config_path: str, out_dir: Optional[str] = None) -> Tuple[RunConfig, Path]:
    """
    Load a run config with the server defaults and limits, and pick its output directory.

    Precedence for the directory: the ``out_dir`` argument, the config's own
    ``out_dir`` key, then ``<output_dir>/<config file stem>``.
    """
    cfg = RunConfig.load(config_path, config["run_defaults"], config["limits"])
    if out_dir:
        out = Path(out_dir)
    elif cfg["out_dir"]:
        out = Path(cfg["out_dir"])
    else:
        out = Path(config["output_dir"]) / Path(config_path).stem
    return cfg.replace(out_dir=str(out)), out

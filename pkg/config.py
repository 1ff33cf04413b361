"""
Configuration for the gradreg tools.

Service-level settings for the command line and the MCP server. Experiment
knobs live in flat run-config files; ``run_defaults`` supplies every key a
run file leaves out.
"""

import os

from gradreg.runconfig import DEFAULTS

config = {
    "run_defaults": dict(DEFAULTS),
    "limits": {
        "max_epochs": 200,
        "max_noise_trials": 50,
        "max_attack_examples": 400,
    },
    "output_dir": os.getenv("GRADREG_OUTPUT_DIR", "runs"),
    "mnist_dir": os.getenv("MNIST_DIR", "data/mnist"),
    "log_level": os.getenv("GRADREG_LOG_LEVEL", "INFO"),
    "progress": os.getenv("GRADREG_PROGRESS", "0").lower() in ("1", "true", "yes"),
}

"""
Train Tool

Train a softmax regression or sigmoid MLP from a run config, optionally with
worst-case perturbation injection and the two-stage protocol.
"""

from config import config
from gradreg.commands import cmd_train
from tools.runs import load_run


def train_tool(config_path: str, out_dir: str = None) -> dict:
    """
    Train a model described by a flat key=value run config.

    Args:
        config_path: Path to the run config file
        out_dir: Output directory → defaults to the config's out_dir, then
                 <output_dir>/<config name>

    Returns:
        Dictionary with the training summary (errors, input-gradient norm,
        two-stage outcome) and the written files
    """
    try:
        cfg, out = load_run(config_path, out_dir)
        summary = cmd_train(cfg, out, config["mnist_dir"], progress=False)
        summary["out_dir"] = str(out)
        return summary

    except Exception as e:
        return {
            "error": f"Error training model: {str(e)}",
            "config_path": config_path,
        }

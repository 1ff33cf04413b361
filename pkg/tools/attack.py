"""
Perturbation Tools

Render worst-case Lp perturbations for a trained model, or evaluate the closed
form for a single supplied gradient.
"""

import math
from typing import List

from config import config
from gradreg.commands import cmd_attack
from gradreg.numcore import lp_norm
from gradreg.perturb import PerturbSpec, regularizer_value, second_order_term, worst_case_epsilon
from prompts.robustness_report import perturbation_review_prompt
from tools.runs import load_run


def _p_out(p: float):
    return "inf" if math.isinf(p) else p


def attack_tool(config_path: str, model_path: str = None, out_dir: str = None, format: str = "raw") -> dict:
    """
    Render original, perturbed and magnified-perturbation grids for a trained model.

    Args:
        config_path: Path to the run config (p, sigma, magnify, attack_examples)
        model_path: Model file → defaults to <out_dir>/model.bin
        out_dir: Output directory → same defaults as train_tool
        format: Output format → "raw" (summary only), "review" (summary plus
                the filled perturbation review prompt)

    Returns:
        Dictionary with clean/perturbed error on the rendered examples and the
        written PGM and CSV files
    """
    try:
        cfg, out = load_run(config_path, out_dir)
        summary = cmd_attack(cfg, out, model_path, config["mnist_dir"])
        summary["out_dir"] = str(out)

        if format == "review":
            return {
                "prompt": perturbation_review_prompt().format(**summary),
                "context": summary,
                "format_type": format,
                "timestamp": summary.get("created_at"),
            }
        return summary

    except Exception as e:
        return {
            "error": f"Error rendering perturbations: {str(e)}",
            "config_path": config_path,
            "model_path": model_path,
        }


def perturbation_tool(gradient: List[float], p: float = 2.0, sigma: float = 1.0) -> dict:
    """
    Closed-form worst-case perturbation for a loss gradient.

    Args:
        gradient: Loss gradient with respect to the input
        p: Norm parameter in [1, inf]; values above 1e6 are treated as inf
        sigma: Perturbation budget, positive

    Returns:
        Dictionary with epsilon, its p-norm, the dual exponent and the
        first- and second-order regularizer values
    """
    try:
        spec = PerturbSpec(p, sigma)
        eps = worst_case_epsilon(gradient, spec)
        return {
            "gradient": list(gradient),
            "p": _p_out(spec.p),
            "dual_p": _p_out(spec.dual),
            "sigma": spec.sigma,
            "epsilon": [float(v) for v in eps],
            "epsilon_norm": lp_norm(eps, spec.p),
            "regularizer": regularizer_value(gradient, spec),
            "second_order": second_order_term(gradient, spec),
        }

    except Exception as e:
        return {
            "error": f"Error computing perturbation: {str(e)}",
            "gradient": gradient,
            "p": p,
            "sigma": sigma,
        }

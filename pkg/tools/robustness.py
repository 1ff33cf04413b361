"""
Robustness Tools

Measure error under Gaussian input noise next to the rate predicted from
minimum-perturbation statistics, or evaluate the prediction for supplied
statistics.
"""

from config import config
from gradreg.commands import cmd_robust
from gradreg.robust import flip_probability, predict_missrate_from_moments
from prompts.robustness_report import robustness_report_prompt
from tools.runs import load_run


def robust_tool(config_path: str, model_path: str = None, out_dir: str = None, format: str = "raw") -> dict:
    """
    Robustness analysis of a trained model.

    Args:
        config_path: Path to the run config (noise levels, line-search step, bin width)
        model_path: Model file → defaults to <out_dir>/model.bin
        out_dir: Output directory → same defaults as train_tool
        format: Output format → "raw" (summary only), "report" (summary plus
                the filled robustness report prompt)

    Returns:
        Dictionary with minimum-perturbation statistics and one actual/predicted
        entry per noise level
    """
    try:
        cfg, out = load_run(config_path, out_dir)
        summary = cmd_robust(cfg, out, model_path, config["mnist_dir"], progress=False)
        summary["out_dir"] = str(out)

        if format == "raw":
            return summary
        return format_robust_output(summary, format)

    except Exception as e:
        return {
            "error": f"Error analysing robustness: {str(e)}",
            "config_path": config_path,
            "model_path": model_path,
        }


def _rate(value) -> str:
    return "n/a" if value is None else f"{100.0 * value:.2f}%"


def format_robust_output(summary: dict, format_type: str) -> dict:
    """Fill the report prompt from a robust summary."""
    if format_type != "report":
        return summary

    table = "\n".join(
        f"- sigma={row['sigma_noise']:g}: actual {_rate(row['actual_rate'])}, "
        f"predicted {_rate(row['predicted_rate'])}, simulated {_rate(row['monte_carlo_rate'])}"
        for row in summary["reports"]
    )
    stats = summary["min_perturbation"]
    near_zero = summary["near_zero"]
    prompt = robustness_report_prompt().format(
        model=summary["model"],
        split=summary["split"],
        n_examples=summary["n_examples"],
        p_miss_clean=_rate(summary["p_miss_clean"]),
        mu_a="n/a" if stats["mu_a"] is None else f"{stats['mu_a']:.4f}",
        sigma_a="n/a" if stats["sigma_a"] is None else f"{stats['sigma_a']:.4f}",
        n_correct=stats["n_correct"],
        n_unflipped=stats["n_unflipped"],
        report_table=table,
        near_zero_sigma=near_zero["sigma_noise"],
        near_zero_predicted=_rate(near_zero["predicted_additional"]),
        near_zero_actual=_rate(near_zero["actual_additional"]),
    )
    return {
        "prompt": prompt,
        "context": summary,
        "format_type": format_type,
        "timestamp": summary.get("created_at"),
    }


def missrate_tool(p_miss: float, mu_a: float, sigma_a: float, sigma_noise: float, n: int = 1) -> dict:
    """
    Predicted misclassification rate under Gaussian noise.

    Args:
        p_miss: Clean error rate in [0, 1]
        mu_a: Mean minimum perturbation length
        sigma_a: Standard deviation of the minimum perturbation length
        sigma_noise: Per-dimension noise standard deviation
        n: Number of adversarial directions in the union bound → defaults to 1

    Returns:
        Dictionary with P(delta >= 0) and the predicted rate
    """
    try:
        return {
            "p_miss": p_miss,
            "mu_a": mu_a,
            "sigma_a": sigma_a,
            "sigma_noise": sigma_noise,
            "n": n,
            "flip_probability": flip_probability(mu_a, sigma_a, sigma_noise),
            "predicted_rate": predict_missrate_from_moments(p_miss, mu_a, sigma_a, sigma_noise, n),
        }

    except Exception as e:
        return {
            "error": f"Error predicting missrate: {str(e)}",
            "p_miss": p_miss,
            "mu_a": mu_a,
            "sigma_a": sigma_a,
            "sigma_noise": sigma_noise,
        }

"""
Robustness Report Prompts

Prompt templates for reading robustness runs and perturbation panels.
"""


def robustness_report_prompt():
    """
    Report prompt comparing measured and predicted error under Gaussian noise.

    Returns:
        str: Prompt template with {placeholders} filled from a robust run summary
    """
    return """
**ROBUSTNESS UNDER GAUSSIAN NOISE**

Please review the following robustness run and write a short report.

**Run Details:**
- Model: {model}
- Evaluation split: {split} ({n_examples} examples)
- Clean error P(miss): {p_miss_clean}

**Minimum Perturbation Statistics** (line search along the input gradient):
- Mean mu_a: {mu_a}
- Standard deviation sigma_a: {sigma_a}
- Correct examples: {n_correct}, not flipped within the search range: {n_unflipped}

**Actual vs Predicted Error per Noise Level:**
{report_table}

**Near-zero Estimate** (noise {near_zero_sigma}):
- Predicted additional error: {near_zero_predicted}
- Measured additional error: {near_zero_actual}

**Required Analysis:**

## 1. Fit of the prediction
- How closely does the predicted rate follow the measured rate at each level?
- Where does the Gaussian fit of the minimum perturbations over- or underestimate?

## 2. Robustness margin
- What does mu_a relative to sigma_a say about how many examples sit close to the boundary?
- Is the near-zero estimate consistent with the measured additional error?

## 3. Recommendations
- Would stronger weight decay or perturbation injection likely help?
- Which noise level should the next run add?
"""


def perturbation_review_prompt():
    """
    Review prompt for a rendered perturbation panel.

    Returns:
        str: Prompt template for interpreting an attack run
    """
    return """
**PERTURBATION PANEL REVIEW**

**Attack Details:**
- Model: {model}
- Norm p: {p}, budget sigma: {sigma}
- Examples rendered: {examples}
- Clean error: {clean_error}, error under perturbation: {perturbed_error}

**Required Analysis:**

## 1. Visual structure
- Do the magnified perturbations erase strokes of the true class?
- Do they add strokes of a competing class?

## 2. Norm choice
- How does the structure differ from what a sign (p=inf) or single-pixel (p=1) perturbation would show?

## 3. Summary
- One paragraph on how vulnerable the model looks at this budget.
"""

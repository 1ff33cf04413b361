"""
Lp gradient-perturbation regularization toolkit.

Trains small softmax / sigmoid classifiers with worst-case perturbation
injection, generates and renders perturbations for any norm parameter p, and
predicts misclassification rates under Gaussian input noise from
minimum-perturbation statistics.
"""

__version__ = "0.1.0"

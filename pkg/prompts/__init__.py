"""
Prompts for the gradreg MCP Server

This module contains prompt templates for reading experiment outputs:
robustness reports that compare measured and predicted noisy error, and
reviews of rendered perturbation panels.
"""

"""
gradreg MCP Server

A Model Context Protocol server exposing Lp gradient-perturbation training,
perturbation rendering and Gaussian-noise robustness analysis as tools.
"""

import logging
import sys

from mcp.server.fastmcp import FastMCP
from config import config

# stdout carries the stdio transport
logging.basicConfig(level=config["log_level"], stream=sys.stderr)

# Create the MCP server
mcp = FastMCP("gradreg-mcp")

# Import and register tools
from tools.train_model import train_tool
from tools.attack import attack_tool, perturbation_tool
from tools.robustness import robust_tool, missrate_tool

# Import prompts
from prompts.robustness_report import (
    robustness_report_prompt,
    perturbation_review_prompt
)

# Register tools with the server
mcp.tool()(train_tool)
mcp.tool()(attack_tool)
mcp.tool()(robust_tool)
mcp.tool()(perturbation_tool)
mcp.tool()(missrate_tool)

# Register prompts with the server
mcp.prompt()(robustness_report_prompt)
mcp.prompt()(perturbation_review_prompt)

if __name__ == "__main__":
    # Run the server
    mcp.run()

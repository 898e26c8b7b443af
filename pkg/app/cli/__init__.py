"""
SSVR CLI模块
"""

from .config import RunConfig
from .main import benchmark, cli, eval_command, extract_labels, main, synth, train, version

__all__ = [
    "RunConfig",
    "benchmark",
    "cli",
    "eval_command",
    "extract_labels",
    "main",
    "synth",
    "train",
    "version",
]

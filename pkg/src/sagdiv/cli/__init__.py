"""Command-line interface: ``python -m sagdiv.cli`` or the ``sagdiv`` script."""
from .config import RunConfig, load_config, parse_config
from .main import cmd_bench, cmd_fit, cmd_predict, main
from .persistence import load_model, model_from_dict, model_to_dict, save_model

__all__ = [
    "RunConfig", "load_config", "parse_config", "cmd_bench", "cmd_fit", "cmd_predict", "main",
    "load_model", "save_model", "model_to_dict", "model_from_dict",
]

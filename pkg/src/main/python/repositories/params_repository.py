import logging
from pathlib import Path

from src.main.python.core.exceptions import handle_output_errors
from src.main.python.models.model_params import ModelParams
from src.main.python.services.output_manager import OutputManager

log = logging.getLogger(__name__)


class ParamsRepository:
    """ModelParams 檢查點：{T, d, H, replicas, heads: [{U, W}]}"""

    def __init__(self, output: OutputManager):
        self.output = output

    @handle_output_errors
    def save_params(self, th: ModelParams, relative: str) -> Path:
        path = self.output.write_json(relative, th.to_dict())
        log.info(f"Saved parameters {th} to {path}")
        return path

    @handle_output_errors
    def load_params(self, relative: str) -> ModelParams:
        return ModelParams.from_dict(self.output.read_json(relative))

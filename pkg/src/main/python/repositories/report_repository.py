import logging
from pathlib import Path
from typing import Any, Dict, Sequence

import pandas as pd

from src.main.python.core.exceptions import handle_output_errors
from src.main.python.models.loss_report import LossReport
from src.main.python.models.stability_report import StabilityReport, StabilityRow
from src.main.python.services.output_manager import OutputManager

log = logging.getLogger(__name__)


class ReportRepository:
    """
    證書與穩定性報告的存取

    LossReport / StabilityReport 為 CSV，其餘報告為 JSON 文檔
    """

    def __init__(self, output: OutputManager):
        self.output = output

    @handle_output_errors
    def save_loss_reports(self, reports: Sequence[LossReport], relative: str) -> Path:
        frame = pd.DataFrame([r.to_row() for r in reports], columns=LossReport.CSV_HEADER)
        return self.output.write_frame(relative, frame)

    @handle_output_errors
    def save_stability_report(self, report: StabilityReport, relative: str) -> Path:
        frame = pd.DataFrame([row.to_row() for row in report.rows], columns=StabilityRow.CSV_HEADER)
        path = self.output.write_frame(relative, frame)
        log.info(f"Saved stability report ({len(report.rows)} checkpoints) to {path}")
        return path

    @handle_output_errors
    def save_document(self, doc: Dict[str, Any], relative: str) -> Path:
        return self.output.write_json(relative, doc)

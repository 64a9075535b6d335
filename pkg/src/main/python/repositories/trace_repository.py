import logging
from pathlib import Path
from typing import List, Sequence

import pandas as pd

from src.main.python.core.exceptions import OutputError, handle_output_errors
from src.main.python.models.train_trace import TRACE_HEADER, TrainTrace
from src.main.python.services.output_manager import OutputManager

log = logging.getLogger(__name__)


def trace_frame(trace: TrainTrace) -> pd.DataFrame:
    return pd.DataFrame([row.to_row() for row in trace.rows], columns=TRACE_HEADER)


def aggregate_traces(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """
    按 iter 聚合多次試驗：iter, <metric>_mean, <metric>_std, ...

    std 為樣本標準差（ddof=1）；單次試驗時為 0。缺失指標保持為空。
    """
    if not frames:
        raise OutputError("No traces to aggregate")
    stacked = pd.concat(frames, ignore_index=True)
    metrics = [c for c in TRACE_HEADER if c != 'iter']
    grouped = stacked.groupby('iter', sort=True)[metrics]
    mean = grouped.mean()
    std = grouped.std(ddof=1) if len(frames) > 1 else grouped.mean() * 0.0
    columns = {}
    for metric in metrics:
        columns[f"{metric}_mean"] = mean[metric]
        columns[f"{metric}_std"] = std[metric]
    return pd.DataFrame(columns).reset_index()


class TraceRepository:
    """訓練軌跡 CSV（固定表頭）與聚合 CSV"""

    def __init__(self, output: OutputManager):
        self.output = output

    @handle_output_errors
    def save_trace(self, trace: TrainTrace, relative: str) -> Path:
        path = self.output.write_frame(relative, trace_frame(trace))
        log.debug(f"Saved trace with {len(trace.rows)} rows to {path}")
        return path

    @handle_output_errors
    def load_trace(self, relative: str) -> pd.DataFrame:
        frame = self.output.read_frame(relative)
        if list(frame.columns) != TRACE_HEADER:
            raise OutputError(f"Unexpected trace header in {relative}: {list(frame.columns)}")
        return frame

    @handle_output_errors
    def save_aggregate(self, frames: List[pd.DataFrame], relative: str) -> Path:
        path = self.output.write_frame(relative, aggregate_traces(frames))
        log.info(f"Saved aggregate of {len(frames)} trials to {path}")
        return path

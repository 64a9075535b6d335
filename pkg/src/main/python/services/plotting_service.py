import logging
from pathlib import Path
from typing import Dict, List, Mapping

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd

from src.main.python.core.exceptions import handle_output_errors
from src.main.python.services.output_manager import OutputManager

log = logging.getLogger(__name__)

# 損失類指標使用對數縱軸
LOG_SCALE_METRICS = {'train_loss', 'test_loss', 'grad_norm'}


class PlottingService:
    """
    以 matplotlib（Agg 後端）輸出 SVG 折線圖

    每個指標一張圖，每條曲線對應一個 H，陰影為 ±1 標準差。
    """

    def __init__(self, output: OutputManager, width: float = 6.0):
        self.output = output
        self.width = width
        # 固定 SVG 的隨機 id 與元數據，使相同輸入得到相同文件
        matplotlib.rcParams['svg.hashsalt'] = 'attention-gd-bounds'
        matplotlib.rcParams['svg.fonttype'] = 'none'

    @staticmethod
    def available_metrics(frame: pd.DataFrame) -> List[str]:
        metrics = []
        for column in frame.columns:
            if column.endswith('_mean'):
                metric = column[:-len('_mean')]
                if frame[column].notna().any():
                    metrics.append(metric)
        return metrics

    @handle_output_errors
    def plot_metric(self, aggregates: Mapping[str, pd.DataFrame], metric: str, relative: str,
                    title: str = '') -> Path:
        golden_ratio = (5 ** 0.5 - 1.0) / 2.0
        fig, ax = plt.subplots(figsize=(self.width, self.width * golden_ratio))
        try:
            for label, frame in aggregates.items():
                mean = frame[f"{metric}_mean"]
                if not mean.notna().any():
                    continue
                std = frame[f"{metric}_std"].fillna(0.0)
                ax.plot(frame['iter'], mean, label=label, linewidth=1.5)
                ax.fill_between(frame['iter'], mean - std, mean + std, alpha=0.2)
            if metric in LOG_SCALE_METRICS:
                ax.set_yscale('log')
            ax.set_xlabel('iteration')
            ax.set_ylabel(metric)
            if title:
                ax.set_title(title)
            ax.legend(loc='best', frameon=False)
            ax.grid(True, linewidth=0.3, alpha=0.5)
            fig.tight_layout()
            with self.output.open_for_write(relative) as handle:
                fig.savefig(handle, format='svg', metadata={'Date': None})
        finally:
            plt.close(fig)
        log.debug(f"Plotted {metric} to {self.output.path(relative)}")
        return self.output.path(relative)

    def plot_all(self, aggregates: Dict[str, pd.DataFrame], prefix: str, title: str = '') -> List[Path]:
        """為所有非空指標各輸出一張圖"""
        if not aggregates:
            return []
        first = next(iter(aggregates.values()))
        return [self.plot_metric(aggregates, metric, f"{prefix}_{metric}.svg", title)
                for metric in self.available_metrics(first)]

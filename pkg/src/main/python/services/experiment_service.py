"""
重現目標的實驗編排

每個 H、每次試驗：
1. 以 seed + trial 生成 n_train + n_test 個樣本並切分為訓練集與測試集
2. 從 θ₀ = 0（H 個綁定副本）訓練
3. 寫出單次軌跡 CSV，按 H 寫出聚合 CSV，再按指標畫 SVG 圖並寫摘要 JSON
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Union

import numpy as np
import pandas as pd

from src.main.python.core.datagen import dm1_sample, dm2_sample, planted_head
from src.main.python.core.ntk import target_params_for
from src.main.python.core.training import train
from src.main.python.models.experiment_config import ExperimentConfig, merge_config, preset
from src.main.python.models.mixture_spec import MixtureSpec, NoiseBounds
from src.main.python.models.model_params import HeadParams, ModelParams
from src.main.python.models.planted_spec import PlantedSpec
from src.main.python.models.token_data import Dataset, RelevantMask
from src.main.python.models.train_trace import TrainTrace
from src.main.python.repositories.report_repository import ReportRepository
from src.main.python.repositories.trace_repository import TraceRepository, aggregate_traces, trace_frame
from src.main.python.services.output_manager import OutputManager
from src.main.python.services.plotting_service import PlottingService

log = logging.getLogger(__name__)


@dataclass
class TrialResult:
    H: int
    trial: int
    seed: int
    trace: TrainTrace
    frame: pd.DataFrame


class SplitSample(NamedTuple):
    train: Dataset
    test: Dataset
    train_masks: Optional[List[RelevantMask]]
    test_masks: Optional[List[RelevantMask]]
    spec: Union[MixtureSpec, PlantedSpec]
    bounds: Optional[NoiseBounds]


def split_sample(config: ExperimentConfig, seed: int, threads: int = 1) -> SplitSample:
    """
    生成 n_train + n_test 個樣本並按順序切分

    每個樣本有獨立隨機流，切分不影響生成；DM2 時 masks 與 bounds 為 None
    """
    total = config.n_train + config.n_test
    train_idx = list(range(config.n_train))
    test_idx = list(range(config.n_train, total))
    spec = config.data.with_seed(seed)
    if config.kind == 'dm1':
        sample = dm1_sample(spec, total, name=f"{config.name}-{seed}", threads=threads)
        return SplitSample(sample.data.subset(train_idx), sample.data.subset(test_idx),
                           sample.masks[:config.n_train], sample.masks[config.n_train:], spec, sample.bounds)
    data = dm2_sample(spec, total, name=f"{config.name}-{seed}")
    return SplitSample(data.subset(train_idx), data.subset(test_idx), None, None, spec, None)


def reference_head(sample: SplitSample) -> HeadParams:
    """對齊指標的參考頭：DM1 為 (U_opt, W_opt)，DM2 為 planted 頭"""
    if isinstance(sample.spec, MixtureSpec):
        return target_params_for(sample.spec).theta_opt
    return planted_head(sample.spec)


def _mean(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(present)) if present else None


class ExperimentService:
    """
    重現目標與配置驅動實驗的運行器

    試驗在線程池中並行，結果按試驗序號收集；所有寫入經 OutputManager 串行化。
    """

    def __init__(self, output: OutputManager, seed: int = 0, threads: int = 1):
        self.output = output
        self.seed = seed
        self.threads = threads
        self.traces = TraceRepository(output)
        self.reports = ReportRepository(output)
        self.plotting = PlottingService(output)

    @staticmethod
    def load_config(figure: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        doc = preset(figure)
        if overrides:
            doc = merge_config(doc, overrides)
        return ExperimentConfig.from_dict(doc)

    def run_trial(self, config: ExperimentConfig, H: int, trial: int) -> TrialResult:
        seed = self.seed + trial
        sample = split_sample(config, seed)
        th0 = ModelParams.zeros(config.data.T, config.data.d, 1, replicas=H)
        trace = train(sample.train, th0, config.train, eval_data=sample.test, masks=sample.train_masks,
                      planted=reference_head(sample))
        log.info(f"{config.name} H={H} trial={trial}: final loss={trace.losses[-1]:.4g}, eta={trace.eta:.4g}")
        return TrialResult(H=H, trial=trial, seed=seed, trace=trace, frame=trace_frame(trace))

    def _run_trials(self, config: ExperimentConfig, H: int) -> List[TrialResult]:
        trials = range(config.trials)
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(lambda i: self.run_trial(config, H, i), trials))
        return [self.run_trial(config, H, i) for i in trials]

    def _summarize(self, config: ExperimentConfig, H: int, results: List[TrialResult]) -> Dict[str, Any]:
        censored = config.train.K + 1
        hits = [r.trace.first_iter_below(config.loss_threshold) for r in results]
        final_rows = [r.trace.rows[-1] for r in results]
        first_rows = [r.trace.rows[0] for r in results]
        return {
            'H': H,
            'eta': results[0].trace.eta,
            'iters_to_threshold': hits,
            # 未達到閾值的試驗按 K + 1 計
            'mean_iters_to_threshold': float(np.mean([censored if h is None else h for h in hits])),
            'final_train_loss': [row.train_loss for row in final_rows],
            'initial_test_loss': [row.test_loss for row in first_rows],
            'final_test_loss': [row.test_loss for row in final_rows],
            'final_align_U': [row.align_U for row in final_rows],
            'final_align_W': [row.align_W for row in final_rows],
            'mean_final_align_U': _mean([row.align_U for row in final_rows]),
            'mean_final_attn_rel_mass': _mean([row.attn_rel_mass for row in final_rows]),
        }

    def run(self, config: ExperimentConfig) -> Dict[str, Any]:
        """運行配置中的所有 H 與試驗，返回摘要"""
        started = time.time()
        log.info(f"Running experiment '{config.name}': H={config.H_values}, trials={config.trials}, "
                 f"K={config.train.K}, optimizer={config.train.optimizer.value}")
        aggregates: Dict[str, pd.DataFrame] = {}
        per_H = []

        for H in config.H_values:
            results = self._run_trials(config, H)
            for r in results:
                self.traces.save_trace(r.trace, f"{config.name}/H{H}/trial{r.trial}.csv")
            frames = [r.frame for r in results]
            self.traces.save_aggregate(frames, f"{config.name}/H{H}/aggregate.csv")
            aggregates[f"H={H}"] = aggregate_traces(frames)
            per_H.append(self._summarize(config, H, results))

        plots = self.plotting.plot_all(aggregates, f"{config.name}/{config.name}", title=config.name)
        summary = {
            'name': config.name,
            'seed': self.seed,
            'config': config.to_dict(),
            'loss_threshold': config.loss_threshold,
            'results': per_H,
            'plots': [p.name for p in plots],
        }
        self.reports.save_document(summary, f"{config.name}/summary.json")
        log.info(f"Experiment '{config.name}' finished in {time.time() - started:.1f}s")
        return summary

    def reproduce(self, figure: str, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        return self.run(self.load_config(figure, overrides))

    def replot(self, name: str) -> List[str]:
        """從已有的聚合 CSV 重新畫圖"""
        root = self.output.path(name)
        H_dirs = sorted((p for p in root.glob('H*') if p.is_dir() and p.name[1:].isdigit()),
                        key=lambda p: int(p.name[1:]))
        aggregates = {}
        for H_dir in H_dirs:
            relative = f"{name}/{H_dir.name}/aggregate.csv"
            if self.output.exists(relative):
                aggregates[f"H={H_dir.name[1:]}"] = self.output.read_frame(relative)
        if not aggregates:
            log.warning(f"No aggregate CSV files found under {root}")
            return []
        return [p.name for p in self.plotting.plot_all(aggregates, f"{name}/{name}", title=name)]

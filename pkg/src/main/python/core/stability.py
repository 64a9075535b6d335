"""
留一（leave-one-out）穩定性實驗

L̂^{¬i}(θ) = (1/n) Σ_{j≠i} ℓ_j(θ)，保持 1/n 歸一化
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from src.main.python.core.exceptions import ConfigurationError, IndexOutOfRangeError
from src.main.python.core.objective import beta_constants, empirical_risk, per_sample_losses
from src.main.python.core.training import gd_step, resolve_step_size
from src.main.python.models.model_params import ModelParams
from src.main.python.models.stability_report import (
    RecursionReport, RecursionViolation, StabilityReport, StabilityRow
)
from src.main.python.models.token_data import Dataset
from src.main.python.models.train_config import OptimizerName, TrainConfig

log = logging.getLogger(__name__)

RECURSION_TOL = 1e-12


def _require_gd(config: TrainConfig):
    if config.optimizer != OptimizerName.GD:
        raise ConfigurationError(f"Stability runs use plain GD, got '{config.optimizer.value}'",
                                 details={'field': 'optimizer'})


def _gd_checkpoints(data: Dataset, th0: ModelParams, eta: float, checkpoints: Sequence[int],
                    normalizer: int) -> List[ModelParams]:
    """從 θ₀ 運行 GD，返回各檢查點上的參數"""
    wanted = set(checkpoints)
    out = []
    th = th0.copy()
    for k in range(max(checkpoints) + 1):
        if k in wanted:
            out.append(th.copy())
        if k < max(checkpoints):
            th = gd_step(data, th, eta, normalizer)
    return out


def _loo_checkpoints(data: Dataset, i: int, th0: ModelParams, eta: float,
                     checkpoints: Sequence[int]) -> List[ModelParams]:
    # n = 1 時 L̂^{¬i} 為空和，梯度恆為零
    if data.n == 1:
        return [th0.copy() for _ in checkpoints]
    return _gd_checkpoints(data.without(i), th0, eta, checkpoints, data.n)


def _check_index(data: Dataset, i: int):
    if not 0 <= i < data.n:
        raise IndexOutOfRangeError(f"Leave-one-out index {i} out of range [0, {data.n})",
                                   details={'index': i, 'n': data.n})


def loo_train(data: Dataset, i: int, th0: ModelParams, config: TrainConfig, eta: Optional[float] = None,
              th_target: Optional[ModelParams] = None) -> ModelParams:
    """
    在 L̂^{¬i} 上從 θ₀ 執行 K 步 GD

    eta 省略時按 config 在完整數據集上解析，與完整訓練使用同一步長。
    """
    _check_index(data, i)
    _require_gd(config)
    if eta is None:
        eta = resolve_step_size(config, data, th0, th_target)
    return _loo_checkpoints(data, i, th0, eta, [config.K])[0]


def beta1_tilde(th_target: ModelParams, th0: ModelParams, R: float) -> float:
    """β̃₁(θ) = √T R(2R²(3‖θ−θ₀‖ + ‖θ‖_{2,∞}) + 1)"""
    dist = (th_target - th0).norm()
    return float(math.sqrt(th_target.T) * R
                 * (2.0 * R ** 2 * (3.0 * dist + th_target.max_head_norm()) + 1.0))


def generalization_bound(data: Dataset, th_target: ModelParams, th0: ModelParams, eta: float, K: int) -> float:
    """(4/n)(2K L̂(θ) + 9‖θ−θ₀‖²/(4η))"""
    if eta <= 0:
        return math.inf
    dist = (th_target - th0).norm()
    return 4.0 / data.n * (2.0 * K * empirical_risk(data, th_target) + 9.0 * dist ** 2 / (4.0 * eta))


def stability_lemma_rhs(data: Dataset, th_target: ModelParams, th0: ModelParams, eta: float, K: int,
                        R: Optional[float] = None) -> float:
    """(2ηβ̃₁/n)(2K L̂(θ) + 9‖θ−θ₀‖²/(4η))，按 η 展開以允許 η = 0"""
    R = max(data.R if R is None else R, 1.0)
    dist = (th_target - th0).norm()
    G = beta1_tilde(th_target, th0, R)
    return 2.0 * G / data.n * (2.0 * K * eta * empirical_risk(data, th_target) + 9.0 * dist ** 2 / 4.0)


def avg_model_stability(data: Dataset, th0: ModelParams, config: TrainConfig, test_data: Optional[Dataset] = None,
                        th_target: Optional[ModelParams] = None, threads: int = 1,
                        checkpoints: Optional[Sequence[int]] = None) -> StabilityReport:
    """
    (1/n) Σ_i ‖θ_K − θ_K^{¬i}‖，在每個檢查點上計算

    n 次留一運行彼此獨立，以線程池並行；結果按索引順序收集。
    """
    _require_gd(config)
    checkpoints = sorted(set(checkpoints or [config.K]))
    if checkpoints[0] < 0 or checkpoints[-1] > config.K:
        raise ValueError(f"Checkpoints must lie in [0, {config.K}], got {checkpoints}")
    eta = resolve_step_size(config, data, th0, th_target)
    n = data.n
    log.info(f"Stability run: n={n}, K={config.K}, eta={eta:.6g}, checkpoints={checkpoints}")

    full = _gd_checkpoints(data, th0, eta, checkpoints, n)

    def run(i: int) -> List[ModelParams]:
        return _loo_checkpoints(data, i, th0, eta, checkpoints)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            loo = list(pool.map(run, range(n)))
    else:
        loo = [run(i) for i in range(n)]

    distances = np.array([[(full[c] - loo[i][c]).norm() for c in range(len(checkpoints))] for i in range(n)])

    R = max(data.R, 1.0)
    G = beta1_tilde(th_target, th0, R) if th_target is not None else None
    rows = []
    for c, K in enumerate(checkpoints):
        gap = (empirical_risk(test_data, full[c]) - empirical_risk(data, full[c])
               if test_data is not None else None)
        rows.append(StabilityRow(
            K=K,
            avg_stability=float(np.mean(distances[:, c])),
            gap_estimate=gap,
            lipschitz_G=G,
            bound_rhs=generalization_bound(data, th_target, th0, eta, K) if th_target is not None else None,
            lemma_rhs=stability_lemma_rhs(data, th_target, th0, eta, K, R) if th_target is not None else None,
        ))
    report = StabilityReport(rows=rows, eta=eta, n=n, per_sample=distances[:, -1])
    log.info(f"Average model stability at K={checkpoints[-1]}: {report.final.avg_stability:.6g}")
    return report


def _expansiveness_factor(loo_data: Dataset, n: int, th_a: ModelParams, th_b: ModelParams, eta: float,
                          R: float, grid: int) -> float:
    """max_α (1 + ηβ₃(θ_α)L̂^{¬i}(θ_α)/√H) ∨ ηβ₂(θ_α)，θ_α 在網格上取值"""
    factor = 0.0
    for a in np.linspace(0.0, 1.0, grid):
        th = th_a * (1.0 - a) + th_b * a
        beta = beta_constants(R, th.T, th.d, th.H, th.max_head_norm())
        loss = empirical_risk(loo_data, th, normalizer=n)
        factor = max(factor, 1.0 + eta * beta.beta3 * loss / math.sqrt(th.H), eta * beta.beta2)
    return factor


def check_recursion(data: Dataset, i: int, th0: ModelParams, eta: float, K: int, grid: int = 101) -> RecursionReport:
    """
    ‖θ_{k+1} − θ_{k+1}^{¬i}‖ ≤ f_k‖θ_k − θ_k^{¬i}‖ + (ηβ₁(θ_k)/n)ℓ_i(θ_k)

    f_k 在 [θ_k, θ_k^{¬i}] 的 grid 點網格上估計，損失為留一風險 L̂^{¬i}。
    """
    _check_index(data, i)
    if grid < 2:
        raise ValueError(f"grid must have at least 2 points, got {grid}")
    n = data.n
    if n < 2:
        raise ValueError("Recursion check needs at least two samples")
    loo_data = data.without(i)
    R = max(data.R, 1.0)
    th, th_loo = th0.copy(), th0.copy()
    report = RecursionReport(index=i, factors=[])
    for k in range(K):
        factor = _expansiveness_factor(loo_data, n, th, th_loo, eta, R, grid)
        report.factors.append(factor)
        beta1 = beta_constants(R, th.T, th.d, th.H, th.max_head_norm()).beta1
        loss_i = float(per_sample_losses(data.subset([i]), th)[0])
        gap = (th - th_loo).norm()
        th_next = gd_step(data, th, eta)
        th_loo_next = gd_step(loo_data, th_loo, eta, n)
        lhs = (th_next - th_loo_next).norm()
        rhs = factor * gap + eta * beta1 / n * loss_i
        if lhs > rhs + RECURSION_TOL * max(1.0, rhs):
            report.violations.append(RecursionViolation(step=k, lhs=lhs, rhs=rhs))
        th, th_loo = th_next, th_loo_next
    if report.violations:
        log.warning(f"Stability recursion violated at {len(report.violations)} of {K} steps for index {i}")
    return report

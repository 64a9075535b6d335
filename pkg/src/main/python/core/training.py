"""
全批量訓練

- 單步 GD 與按名稱加載的優化器（gd / gd_momentum / adam）
- 第一階段：θ₀ = 0 出發、按 α_h√H 縮放的一步 GD
- 步長規則（explicit / auto_theorem / sqrtH_scaled）
- 軌跡記錄、逐步下降檢查與訓練損失定理檢查
"""

import importlib
import logging
import math
from typing import Dict, Optional, Sequence

import numpy as np

from src.main.python.core.exceptions import (
    ConfigurationError, NonFiniteError, create_divergence_error, create_optimizer_load_error,
    handle_numeric_errors
)
from src.main.python.core.linalg import make_rng
from src.main.python.core.ntk import head_requirements_for_target, irrelevant_attention_mass
from src.main.python.core.objective import (
    beta_constants, empirical_risk, margins, rho, risk_and_gradient, risk_gradient
)
from src.main.python.core.optimizers.base_optimizer import BaseOptimizer
from src.main.python.models.mixture_spec import MixtureSpec
from src.main.python.models.model_params import HeadParams, ModelParams
from src.main.python.models.token_data import Dataset, RelevantMask
from src.main.python.models.train_config import OptimizerName, StepSizeRule, TrainConfig
from src.main.python.models.train_trace import (
    DescentReport, DescentViolation, GoodInitBounds, PhaseOneResult, TheoremReport, TraceRow, TrainTrace
)

log = logging.getLogger(__name__)

STREAM_ALPHA = 3
ROW_IDENTITY_TOL = 1e-12
DESCENT_TOL = 1e-12


def load_optimizer(config: TrainConfig, eta: float) -> BaseOptimizer:
    """動態加載配置中指定的優化器"""
    optimizer_name = config.optimizer.value
    log.debug(f"Loading optimizer: {optimizer_name}")

    try:
        module_path = f"src.main.python.core.optimizers.{optimizer_name}_optimizer"
        optimizer_module = importlib.import_module(module_path)
        class_name = f"{optimizer_name.replace('_', ' ').title().replace(' ', '')}Optimizer"
        optimizer_class = getattr(optimizer_module, class_name)
        return optimizer_class(config, eta)

    except (ImportError, AttributeError) as e:
        error = create_optimizer_load_error(optimizer_name, e)
        log.error(f"Failed to load optimizer: {error}")
        raise error


@handle_numeric_errors
def gd_step(data: Dataset, th: ModelParams, eta: float, normalizer: Optional[int] = None) -> ModelParams:
    """θ′ = θ − η∇L̂(θ)"""
    if eta < 0:
        raise ValueError(f"Step size must be non-negative, got {eta}")
    grad = risk_gradient(data, th, normalizer)
    if not grad.is_finite():
        raise NonFiniteError("Non-finite gradient in GD step", details={'eta': eta})
    return th - grad * eta


# ---------------------------------------------------------------------------
# 第一階段
# ---------------------------------------------------------------------------

def draw_alpha(H: int, seed: int) -> np.ndarray:
    """α_h ~ Unif{±1}，由 (seed, STREAM_ALPHA) 決定"""
    rng = make_rng(seed, STREAM_ALPHA)
    return rng.integers(0, 2, size=H) * 2 - 1


def phase_one(data: Dataset, H: int, seed: int, spec: Optional[MixtureSpec] = None,
              th0: Optional[ModelParams] = None, alpha: Optional[Sequence[int]] = None) -> PhaseOneResult:
    """
    θ_h^(1) = θ_h^(0) − α_h√H·∇_{θ_h}L̂(0)

    θ = 0 時注意力均勻，∇_W 恰為零，∇_U 每行相同；因此 θ_h^(1) = α_h·(1_T·rowᵀ, 0)，
    row 為單頭未縮放梯度的負值。給出 spec 時 p = row − (ζ/4)u⋆，P_empirical = ‖p‖。
    """
    if H < 1:
        raise ValueError(f"H must be ≥ 1, got {H}")
    if th0 is not None and (np.any(th0.U != 0) or np.any(th0.W != 0)):
        raise ValueError("The first phase starts from θ₀ = 0; a non-zero initialization was supplied")

    alpha = np.asarray(alpha if alpha is not None else draw_alpha(H, seed), dtype=np.int64)
    if alpha.shape != (H,) or not np.all(np.isin(alpha, (-1, 1))):
        raise ValueError(f"alpha must hold {H} entries in {{-1, +1}}")

    # 單頭在 0 處的梯度；H 頭時 ∇_{θ_h}L̂(0) = g/√H，乘 √H 後抵消
    g = risk_gradient(data, ModelParams.zeros(data.T, data.d))
    if np.any(g.W != 0):
        raise NonFiniteError("W-gradient at zero is not exactly zero", details={'max': float(np.max(np.abs(g.W)))})
    rows = -g.U[0]
    common_row = rows[0].copy()
    spread = float(np.max(np.abs(rows - common_row)))
    if spread > ROW_IDENTITY_TOL * max(1.0, float(np.max(np.abs(common_row)))):
        log.warning(f"First-phase U rows differ by {spread:.3g}")

    U = alpha[:, None, None] * np.tile(common_row, (data.T, 1))[None]
    theta1 = ModelParams(U, np.zeros((H, data.d, data.d)))

    p = P_empirical = None
    if spec is not None:
        p = common_row - spec.zeta_effective / 4.0 * spec.u_star
        P_empirical = float(np.linalg.norm(p))
    log.info(f"First phase: H={H}, n={data.n}, ‖row‖={np.linalg.norm(common_row):.4f}"
             + (f", P={P_empirical:.4g}" if P_empirical is not None else ""))
    return PhaseOneResult(theta1=theta1, alpha=[int(a) for a in alpha], common_row=common_row,
                          p=p, P_empirical=P_empirical)


# ---------------------------------------------------------------------------
# 步長
# ---------------------------------------------------------------------------

def theorem_step_cap(data: Dataset, th0: ModelParams, th_target: ModelParams, K: int) -> float:
    """
    1 ∧ 1/ρ(θ) ∧ ‖θ−θ₀‖²/(K L̂(θ)) ∧ ‖θ−θ₀‖²/L̂(θ₀)

    ‖θ−θ₀‖ = 0 時距離項無意義，只保留前兩項。
    """
    R = max(data.R, 1.0)
    cap = min(1.0, 1.0 / rho(th_target, th0, R))
    dist_sq = (th_target - th0).norm() ** 2
    if dist_sq == 0.0:
        log.warning("Target equals the initialization; distance terms of the step-size rule dropped")
        return cap
    loss_target = empirical_risk(data, th_target)
    loss_init = empirical_risk(data, th0)
    if K > 0 and loss_target > 0:
        cap = min(cap, dist_sq / (K * loss_target))
    if loss_init > 0:
        cap = min(cap, dist_sq / loss_init)
    return cap


def resolve_step_size(config: TrainConfig, data: Dataset, th0: ModelParams,
                      th_target: Optional[ModelParams] = None) -> float:
    if config.step_rule == StepSizeRule.EXPLICIT:
        return float(config.eta)
    if config.step_rule == StepSizeRule.SQRTH_SCALED:
        return float(config.eta_base * math.sqrt(th0.H))
    if th_target is None:
        raise ConfigurationError("auto_theorem step size needs a target θ", details={'field': 'step_rule'})
    eta = theorem_step_cap(data, th0, th_target, config.K)
    log.info(f"Theorem step size: eta={eta:.6g}")
    return eta


# ---------------------------------------------------------------------------
# 軌跡指標
# ---------------------------------------------------------------------------

def _alignment(blocks: np.ndarray, reference: np.ndarray, replicas: int) -> Optional[float]:
    """⟨X̃, X̃*⟩/(‖X̃‖‖X̃*‖)，X̃* 為 reference 重複 H 次"""
    H = blocks.shape[0] * replicas
    norm = math.sqrt(replicas * float(np.sum(blocks ** 2)))
    ref_norm = math.sqrt(H) * float(np.linalg.norm(reference))
    if norm == 0.0 or ref_norm == 0.0:
        return None
    inner = replicas * float(np.sum(blocks * reference[None]))
    return inner / (norm * ref_norm)


def trace_metrics(th: ModelParams, data: Dataset, masks: Optional[Sequence[RelevantMask]] = None,
                  planted: Optional[HeadParams] = None) -> Dict[str, Optional[float]]:
    """
    attn_rel_mass：樣本、頭、行上相關 token 的平均 softmax 質量（需要 masks）
    align_W / align_U：與重複 H 次的 planted 頭的餘弦相似度（需要 planted）
    """
    metrics: Dict[str, Optional[float]] = {'attn_rel_mass': None, 'align_W': None, 'align_U': None}
    if masks is not None:
        masses = [1.0 - irrelevant_attention_mass(data, masks, W) for W in th.W]
        metrics['attn_rel_mass'] = float(np.mean([np.mean(m) for m in masses]))
    if planted is not None:
        metrics['align_W'] = _alignment(th.W, planted.W, th.replicas)
        metrics['align_U'] = _alignment(th.U, planted.U, th.replicas)
    return metrics


def _head_averages(th: ModelParams):
    # 1/H 與 1/√H 縮放的平均頭範數
    W_norms = np.sqrt(np.sum(th.W ** 2, axis=(1, 2)))
    U_norms = np.sqrt(np.sum(th.U ** 2, axis=(1, 2)))
    return (th.replicas * float(np.sum(W_norms)) / th.H,
            th.replicas * float(np.sum(U_norms)) / math.sqrt(th.H))


# ---------------------------------------------------------------------------
# 訓練循環
# ---------------------------------------------------------------------------

def train(data: Dataset, th0: ModelParams, config: TrainConfig, eval_data: Optional[Dataset] = None,
          masks: Optional[Sequence[RelevantMask]] = None, planted: Optional[HeadParams] = None,
          th_target: Optional[ModelParams] = None) -> TrainTrace:
    """
    從 θ₀ 執行 K 步全批量更新

    Raises:
        DivergenceError: 損失非有限或超過 divergence_loss；異常的 trace 屬性保存截至該步的軌跡
    """
    eta = resolve_step_size(config, data, th0, th_target)
    optimizer = load_optimizer(config, eta)
    R = max(data.R, 1.0)
    th = th0.copy()
    trace = TrainTrace(rows=[], eta=eta, optimizer=config.optimizer.value, theta0=th0.copy(), final=th)
    log.info(f"Training started: optimizer={config.optimizer.value}, eta={eta:.6g}, K={config.K}, "
             f"H={th0.H}, n={data.n}")

    for k in range(config.K + 1):
        loss, grad = risk_and_gradient(data, th)
        if not math.isfinite(loss) or loss > config.divergence_loss:
            trace.diverged = True
            trace.final = th
            error = create_divergence_error(k, loss, config.divergence_loss)
            error.trace = trace
            raise error

        grad_norm = grad.norm()
        trace.losses.append(loss)
        trace.grad_norms.append(grad_norm)
        trace.beta2.append(beta_constants(R, th.T, th.d, th.H, th.max_head_norm()).beta2)
        if th_target is not None:
            trace.target_dists.append((th - th_target).norm())

        if k % config.record_every == 0 or k == config.K:
            avg_W, avg_U = _head_averages(th)
            extra = trace_metrics(th, data, masks, planted)
            trace.rows.append(TraceRow(
                iter=k,
                train_loss=loss,
                test_loss=empirical_risk(eval_data, th) if eval_data is not None else None,
                min_margin=float(np.min(margins(data, th))),
                grad_norm=grad_norm,
                dist_to_init=(th - th0).norm(),
                avg_W_norm=avg_W,
                avg_U_norm=avg_U,
                **extra,
            ))
            if config.keep_params:
                trace.params.append(th.copy())
            log.debug(f"iter {k}: loss={loss:.6g}, grad_norm={grad_norm:.4g}")

        if k < config.K:
            th = optimizer.step(th, grad)

    trace.final = th
    log.info(f"Training finished: final loss={trace.losses[-1]:.6g}")
    return trace


# ---------------------------------------------------------------------------
# 定理檢查
# ---------------------------------------------------------------------------

def verify_descent(trace: TrainTrace) -> DescentReport:
    """
    逐步檢查 L̂(θ_{k+1}) ≤ L̂(θ_k) − (η/2)‖∇L̂(θ_k)‖²

    只在 η ≤ 1/ρ_k 的步上檢查，ρ_k = β₂(θ_k) ∨ β₂(θ_{k+1})；違反被記錄而非拋出。
    """
    if trace.optimizer != OptimizerName.GD.value:
        raise ConfigurationError(f"Descent check needs plain GD, trace used '{trace.optimizer}'",
                                 details={'field': 'optimizer'})
    report = DescentReport(checked=0, skipped=0)
    for k in range(trace.K):
        rho_k = max(trace.beta2[k], trace.beta2[k + 1])
        if trace.eta * rho_k > 1.0:
            report.skipped += 1
            continue
        report.checked += 1
        lhs = trace.losses[k + 1]
        rhs = trace.losses[k] - 0.5 * trace.eta * trace.grad_norms[k] ** 2
        if lhs > rhs + DESCENT_TOL * max(1.0, abs(trace.losses[k])):
            report.violations.append(DescentViolation(step=k, lhs=lhs, rhs=rhs))
    if report.violations:
        log.warning(f"Descent violated at {len(report.violations)} of {report.checked} checked steps")
    return report


def verify_theorem_bounds(trace: TrainTrace, th_target: ModelParams, data: Dataset) -> TheoremReport:
    """
    (1/K)Σ_{k=1}^K L̂(θ_k) ≤ 2L̂(θ) + 5‖θ−θ₀‖²/(4ηK)
    ‖θ_K − θ₀‖ ≤ 4‖θ−θ₀‖
    ‖θ_k − θ‖ ≤ 3‖θ−θ₀‖

    前提（H ≥ H_train 與定理步長）不滿足時報告標記為 non-certified，不等式照常評估。
    """
    K = trace.K
    if K < 1:
        raise ValueError("Theorem bounds need at least one GD step")
    th0 = trace.theta0
    dist = (th_target - th0).norm()
    loss_target = empirical_risk(data, th_target)
    avg_bound = (2.0 * loss_target + 5.0 * dist ** 2 / (4.0 * trace.eta * K)) if trace.eta > 0 else math.inf

    if trace.target_dists:
        max_iter_dist = max(trace.target_dists)
    elif trace.params:
        max_iter_dist = max((p - th_target).norm() for p in trace.params + [trace.final])
    else:
        log.warning("Trace carries no iterate distances; iterate bound checked at the final point only")
        max_iter_dist = (trace.final - th_target).norm()

    R = max(data.R, 1.0)
    requirements = head_requirements_for_target(th_target, th0, R)
    step_ok = trace.eta <= theorem_step_cap(data, th0, th_target, K) * (1 + 1e-12)
    certified = (trace.optimizer == OptimizerName.GD.value and step_ok
                 and th0.H >= requirements.H_train)
    if not certified:
        log.warning(f"Theorem preconditions unmet (H={th0.H}, H_train={requirements.H_train:.4g}, "
                    f"step ok={step_ok}); bounds reported as non-certified")

    return TheoremReport(
        avg_loss=float(np.mean(trace.losses[1:])),
        avg_bound=avg_bound,
        final_dist=(trace.final - th0).norm(),
        final_dist_bound=4.0 * dist,
        max_iterate_dist=max_iter_dist,
        iterate_dist_bound=3.0 * dist,
        certified=certified,
        K=K,
    )


def good_init_bounds(B2: float, B_phi: float, gamma: float, K: int, n: int, d: int, T: int, R: float,
                     H: int, eta: Optional[float] = None) -> GoodInitBounds:
    """
    良好初始化下的推論

    ρ(K) 使用 α(K) = 3d√dR²[3√TR³(4g₀ + B₂) + 2√TR]，g₀ = (2B_Φ + log K)/γ
    η 上限：1 ∧ 1/ρ(K) ∧ 4B_Φ²/(γ² log(1 + e^{B_Φ}))；eta 省略時取上限
    """
    if K < 1 or n < 1:
        raise ValueError(f"K and n must be ≥ 1, got K={K}, n={n}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    R = max(R, 1.0)
    g0 = (2.0 * B_phi + math.log(K)) / gamma
    alpha = 3.0 * d * math.sqrt(d) * R ** 2 * (3.0 * math.sqrt(T) * R ** 3 * (4.0 * g0 + B2) + 2.0 * math.sqrt(T) * R)
    rho_K = (2.0 * d * math.sqrt(T * d) * R ** 3 / math.sqrt(H) + T * R ** 2 / 4.0) * alpha ** 2
    eta_cap = min(1.0, 1.0 / rho_K)
    if B_phi > 0:
        eta_cap = min(eta_cap, 4.0 * B_phi ** 2 / (gamma ** 2 * math.log1p(math.exp(B_phi))))
    eta = eta_cap if eta is None else eta

    numerator = (2.0 * B_phi + math.log(K)) ** 2
    cor_root = (256.0 * d * math.sqrt(T * d) * R ** 3 * B2
                * (3.0 * math.sqrt(d) * R ** 2 * (4.0 * g0 + B2) + 1.0) * g0 ** 2)
    return GoodInitBounds(
        train_bound=2.0 / K + 5.0 * numerator / (4.0 * gamma ** 2 * eta * K),
        gen_bound=17.0 * numerator / (gamma ** 2 * eta * n),
        eta_cap=eta_cap,
        H_cor=float(math.ceil(cor_root ** 2)),
        g0=g0,
        rho=rho_K,
    )

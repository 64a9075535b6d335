"""
NTK margin 與 good initialization 證書

- 目標參數 U⋆ / W⋆ / U_opt / W_opt
- relevance score、γ_attn、softmax 飽和
- NTK margin（精確值與 α 符號的 Monte-Carlo）
- γ⋆、P1/P2/P3 檢查、realizability 見證與頭數要求
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.main.python.core.attention import as_array, check_shapes, model_outputs, Tokens
from src.main.python.core.calculus import per_sample_head_gradients
from src.main.python.core.exceptions import (
    CertificateError, IndexOutOfRangeError, UndefinedRequirementError, create_shape_mismatch_error
)
from src.main.python.core.linalg import softmax
from src.main.python.models.certificates import (
    GoodInitReport, HeadRequirements, RealizabilityWitness, TargetParams
)
from src.main.python.models.mixture_spec import MixtureSpec, NoiseBounds
from src.main.python.models.model_params import ModelParams
from src.main.python.models.token_data import Dataset, RelevantMask

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
TARGET_NORM_TOL = 1e-10


@dataclass(frozen=True)
class SaturationReport:
    worst_mass: float
    mean_mass: float
    Gamma: float
    noise_condition: bool


@dataclass(frozen=True)
class NtkMarginReport:
    min: float
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class MonteCarloMargin:
    """每個樣本在 α 符號抽樣下的 margin 均值與標準誤"""
    draws: int
    H: int
    sample_means: np.ndarray
    sample_stderr: np.ndarray
    worst_draw_min: float

    @property
    def min_mean(self) -> float:
        return float(np.min(self.sample_means))

    @property
    def max_stderr(self) -> float:
        return float(np.max(self.sample_stderr))


# ---------------------------------------------------------------------------
# 目標參數
# ---------------------------------------------------------------------------

def target_params(S: float, T: int, d: int, M: int) -> TargetParams:
    if d < M + 2:
        raise create_shape_mismatch_error('pattern space', (M + 2,), (d,))
    eye = np.eye(d) * S
    mu_p, mu_m, nu = eye[0], eye[1], eye[2:2 + M]
    u_star = mu_p - mu_m
    U_star = np.tile(u_star, (T, 1))
    W_star = np.outer(mu_p, mu_p) + np.outer(mu_m, mu_m) + nu.T @ np.tile(mu_p + mu_m, (M, 1))
    return TargetParams(
        U_star=U_star,
        W_star=W_star,
        U_bar=U_star / np.linalg.norm(U_star),
        W_bar=W_star / np.linalg.norm(W_star),
        U_opt=U_star / (S * math.sqrt(2.0 * T)),
        W_opt=W_star / (S ** 2 * math.sqrt(2.0 * (M + 1))),
    )


def target_params_for(spec: MixtureSpec) -> TargetParams:
    return target_params(spec.S, spec.T, spec.d, spec.M)


def multi_head_target(alpha: Sequence[float], target: TargetParams, replicas: int = 1) -> ModelParams:
    """
    θ̃⋆ = (1/√H) concat(Ū⋆, sign(α_h)·W̄⋆)，範數 √2

    alpha 按存儲頭給出；replicas 個副本共用同一符號。
    """
    heads = [target.theta_star(a) for a in alpha]
    H = len(heads) * replicas
    return ModelParams.from_heads(heads, replicas) * (1.0 / math.sqrt(H))


# ---------------------------------------------------------------------------
# relevance 與飽和
# ---------------------------------------------------------------------------

def relevance_scores(x: Tokens, W: np.ndarray, t: int) -> np.ndarray:
    """第 t 行 softmax logit：b_t = XWᵀx_t"""
    X = as_array(x)
    T, d = X.shape
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (d, d):
        raise create_shape_mismatch_error('W', (d, d), W.shape)
    if not 0 <= t < T:
        raise IndexOutOfRangeError(f"Token index {t} out of range [0, {T})")
    return X @ W.T @ X[t]


def gamma_attn(eps: float, S: float, T: int, Z_mu: float) -> float:
    """γ_attn(ε) = (√T/(√2S))(S²(1−ε) − 2εZ_μ)"""
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    return math.sqrt(T) / (SQRT2 * S) * (S ** 2 * (1.0 - eps) - 2.0 * eps * Z_mu)


def saturation_gamma(eps: float, S: float, M: int, zeta: float) -> float:
    """Γ_ε = (8√(2(M+1))/(3S²))·log((ζ⁻¹ − 1)/ε)"""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if zeta <= 0 or zeta >= 1:
        raise UndefinedRequirementError(f"Saturation scale undefined for zeta={zeta}", details={'zeta': zeta})
    return 8.0 * math.sqrt(2.0 * (M + 1)) / (3.0 * S ** 2) * math.log((1.0 / zeta - 1.0) / eps)


def saturation_noise_condition(bounds: NoiseBounds, S: float) -> bool:
    """飽和保證要求 Z_μ ∨ Z_ν ≤ S²/8"""
    return bounds.Z_bar <= S ** 2 / 8.0


def irrelevant_attention_mass(data: Dataset, masks: Sequence[RelevantMask], W: np.ndarray) -> np.ndarray:
    """(n, T) 陣列：每行 softmax 落在無關 token 上的質量"""
    if len(masks) != data.n:
        raise create_shape_mismatch_error('masks', (data.n,), (len(masks),))
    A = softmax(np.einsum('nti,ij,nsj->nts', data.X, W, data.X))
    relevant = np.stack([m.as_bool(data.T) for m in masks])
    return 1.0 - np.einsum('nts,ns->nt', A, relevant.astype(np.float64))


def verify_saturation(data: Dataset, masks: Sequence[RelevantMask], Gamma: float, target: TargetParams,
                      bounds: Optional[NoiseBounds] = None, S: Optional[float] = None) -> SaturationReport:
    """max_{i,t} Σ_{t′∉R} softmax(x_tᵀ Γ W_opt Xᵀ)_{t′}"""
    mass = irrelevant_attention_mass(data, masks, Gamma * target.W_opt)
    noise_ok = True
    if bounds is not None and S is not None:
        noise_ok = saturation_noise_condition(bounds, S)
        if not noise_ok:
            log.warning(f"Noise level Z_bar={bounds.Z_bar:.4g} exceeds S²/8; saturation bound is not certified")
    return SaturationReport(worst_mass=float(np.max(mass)), mean_mass=float(np.mean(mass)),
                            Gamma=float(Gamma), noise_condition=noise_ok)


def attention_margins(data: Dataset, target: TargetParams, Gamma: float) -> np.ndarray:
    """y·Φ(X; U_opt, Γ·W_opt)"""
    th = ModelParams(target.U_opt[None], (Gamma * target.W_opt)[None])
    return data.y * model_outputs(data.X, th)


# ---------------------------------------------------------------------------
# NTK margin
# ---------------------------------------------------------------------------

def ntk_margin(data: Dataset, th0: ModelParams, th_star: ModelParams,
               require_norm: Optional[float] = SQRT2) -> NtkMarginReport:
    """
    y_i⟨∇Φ̃(X_i; θ₀), θ⋆⟩

    Raises:
        CertificateError: ‖θ⋆‖ 與 require_norm 相差超過 1e-10
    """
    th0.check_compatible(th_star)
    check_shapes(data.X, th0.T, th0.d)
    if require_norm is not None and abs(th_star.norm() - require_norm) > TARGET_NORM_TOL:
        raise CertificateError(
            f"NTK target must have norm {require_norm:.6g}, got {th_star.norm():.12g}",
            details={'norm': th_star.norm(), 'required': require_norm}
        )
    dU, dW = per_sample_head_gradients(data.X, th0)
    inner = np.einsum('nhtd,htd->n', dU, th_star.U) + np.einsum('nhij,hij->n', dW, th_star.W)
    values = data.y * th0.replicas * inner / math.sqrt(th0.H)
    return NtkMarginReport(min=float(np.min(values)), values=values)


def ntk_margin_monte_carlo(data: Dataset, common_row: np.ndarray, target: TargetParams, H: int,
                           draws: int, rng: np.random.Generator) -> MonteCarloMargin:
    """
    第一階段後 θ_h = α_h·(1_T·rowᵀ, 0) 的多頭 NTK margin，對 α ~ Unif{±1}^H 抽樣

    每頭的貢獻只依賴 sign(α_h)，因此按正號頭個數 c ~ Bin(H, 1/2) 組合兩種單頭值，
    不必重新執行第一階段。
    """
    T, d = data.T, data.d
    row = np.asarray(common_row, dtype=np.float64)
    U = np.stack([np.tile(row, (T, 1)), -np.tile(row, (T, 1))])
    th = ModelParams(U, np.zeros((2, d, d)))
    dU, dW = per_sample_head_gradients(data.X, th)
    signs = np.array([1.0, -1.0])
    per_head = data.y[:, None] * (np.einsum('nhtd,td->nh', dU, target.U_bar)
                                  + signs[None, :] * np.einsum('nhij,ij->nh', dW, target.W_bar))

    counts = rng.binomial(H, 0.5, size=draws)
    weights = np.stack([counts, H - counts], axis=1) / H          # (draws, 2)
    margins = weights @ per_head.T                                  # (draws, n)
    stderr = np.std(margins, axis=0, ddof=1) / math.sqrt(draws) if draws > 1 else np.zeros(data.n)
    return MonteCarloMargin(
        draws=draws,
        H=H,
        sample_means=np.mean(margins, axis=0),
        sample_stderr=stderr,
        worst_draw_min=float(np.min(margins)),
    )


def gamma_star(S: float, T: int, zeta: float, M: int, Z_mu: float, Z_nu: float, Z: float, P: float) -> float:
    """
    γ⋆ = T(1−ζ)ζ(ζS⁴ − 7Z̄S² − 12Z̄² − 16Z̄³/S²)/(4√(2(M+1)))
         − P·T^{5/2}(S+Z)³ + (S√T/√2)(ζ − 2(1−ζ)Z_μ/S²)
    """
    Z_bar = max(Z_mu, Z_nu)
    attention_term = (T * (1.0 - zeta) * zeta
                      * (zeta * S ** 4 - 7.0 * Z_bar * S ** 2 - 12.0 * Z_bar ** 2 - 16.0 * Z_bar ** 3 / S ** 2)
                      / (4.0 * math.sqrt(2.0 * (M + 1))))
    residual_term = P * T ** 2.5 * (S + Z) ** 3
    linear_term = S * math.sqrt(T) / SQRT2 * (zeta - 2.0 * (1.0 - zeta) * Z_mu / S ** 2)
    return attention_term - residual_term + linear_term


def gamma_star_for(spec: MixtureSpec, bounds: NoiseBounds, P: float = 0.0) -> float:
    return gamma_star(spec.S, spec.T, spec.zeta_effective, spec.M, bounds.Z_mu, bounds.Z_nu, bounds.Z, P)


def model_bound_whp(T: int, R: float, S: float, P: float, delta: float, n: Optional[int] = None) -> float:
    """
    P2 的 Hoeffding 界

    單樣本：TR(S+P)√(2log(1/δ))；給出 n 時為聯合界形式 TR(S+P)√(2log(n/δ))
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    count = 1 if n is None else n
    return T * R * (S + P) * math.sqrt(2.0 * math.log(count / delta))



def _head_signs(th0: ModelParams, target: TargetParams) -> list:
    # U_h 與 Ū⋆ 內積的符號即第一階段的 sign(α_h)；零頭取 +1
    return [-1.0 if float(np.sum(U * target.U_bar)) < 0 else 1.0 for U in th0.U]


def good_init_check(data: Dataset, th0: ModelParams, delta: float, target: TargetParams,
                    alpha: Optional[Sequence[float]] = None, spec: Optional[MixtureSpec] = None,
                    bounds: Optional[NoiseBounds] = None, P: Optional[float] = None) -> GoodInitReport:
    """
    P1：B₂ = max_h ‖θ_h⁰‖
    P2：B_Φ = max_i |Φ̃(X_i; θ₀)|
    P3：min_i y_i⟨∇Φ̃(X_i; θ₀), θ̃⋆⟩，θ̃⋆ 由 multi_head_target 構造

    給出 spec 與 bounds 時與 DM1 理論值 B₂ = √T(S+P)、B_Φ = TR(S+P)√(2log(n/δ))、γ⋆ 比較。
    """
    signs = list(alpha) if alpha is not None else _head_signs(th0, target)
    th_star = multi_head_target(signs, target, th0.replicas)
    margin = ntk_margin(data, th0, th_star)
    B2 = th0.max_head_norm()
    B_phi = float(np.max(np.abs(model_outputs(data.X, th0))))

    B2_theory = B_phi_theory = gamma_formula = None
    p1 = p2 = None
    p3 = margin.min > 0
    if spec is not None and bounds is not None:
        P_value = P or 0.0
        R = max(bounds.R, data.R)
        B2_theory = math.sqrt(spec.T) * (spec.S + P_value)
        B_phi_theory = model_bound_whp(spec.T, R, spec.S, P_value, delta, data.n)
        gamma_formula = gamma_star_for(spec, bounds, P_value)
        p1 = B2 <= B2_theory * (1 + 1e-12)
        p2 = B_phi <= B_phi_theory * (1 + 1e-12)
        p3 = margin.min >= gamma_formula / 2.0
        if gamma_formula <= 0:
            log.warning(f"gamma_star formula is non-positive ({gamma_formula:.4g}); P3 is not certified")

    report = GoodInitReport(
        B2=B2, B_phi=B_phi, ntk_margin_min=margin.min, ntk_margin_mean=margin.mean,
        gamma_star_formula=gamma_formula, B2_theory=B2_theory, B_phi_theory=B_phi_theory,
        P_empirical=P, delta=delta, H=th0.H, n=data.n, p1_pass=p1, p2_pass=p2, p3_pass=bool(p3),
    )
    log.info(f"Good-init check: B2={B2:.4f}, B_phi={B_phi:.4f}, NTK margin={margin.min:.4f}, passed={report.passed}")
    return report


# ---------------------------------------------------------------------------
# realizability 與頭數
# ---------------------------------------------------------------------------

def realizability_witness(B2: float, B_phi: float, gamma: float) -> RealizabilityWitness:
    return RealizabilityWitness(B2=B2, B_phi=B_phi, gamma=gamma)


def _squared_ceil(root: float) -> float:
    if not math.isfinite(root):
        return math.inf
    return float(math.ceil(root ** 2))


def train_head_root(d: int, T: int, R: float, dist: float, max_norm: float, constant: float = 36.0) -> float:
    """√H 門檻：constant·d√(Td)R³(3√dR²(3‖θ−θ₀‖ + ‖θ‖_{2,∞}) + 1)‖θ−θ₀‖²"""
    return (constant * d * math.sqrt(T * d) * R ** 3
            * (3.0 * math.sqrt(d) * R ** 2 * (3.0 * dist + max_norm) + 1.0) * dist ** 2)


def head_requirements_for_target(th: ModelParams, th0: ModelParams, R: float) -> HeadRequirements:
    """由目標參數直接給出訓練與泛化定理的頭數要求"""
    dist = (th - th0).norm()
    m = th.max_head_norm()
    return HeadRequirements(
        H_train=_squared_ceil(train_head_root(th.d, th.T, R, dist, m, 36.0)),
        H_gen=_squared_ceil(train_head_root(th.d, th.T, R, dist, m, 256.0)),
        H_realiz=math.nan, H_P3=math.nan, H_cor=math.nan, g0=dist, g=m,
    )


def head_requirements(B2: float, B_phi: float, gamma: float, K: int, n: int, delta: float,
                      d: int, T: int, R: float, S: Optional[float] = None, P: float = 0.0,
                      gamma_star_value: Optional[float] = None) -> HeadRequirements:
    """
    各條件的最小 H（√H 門檻平方後取上整）

    g₀ = g₀(1/K)，g = B₂ + g₀
    H_train / H_gen：36 / 256·d√(Td)R³(3√dR²(3g₀+g)+1)g₀²
    H_realiz（ε = 1/K）：(5d√(Td)R³B₂/B_Φ)(3√dR²+1)g₀²(1∨g₀)
    H_P3：4(2R³T(S+P) + √TR)/γ⋆·√(2log(n/δ))
    H_cor：256d√(Td)R³B₂(3√dR²(4g₀+B₂)+1)g₀²
    """
    if K < 1:
        raise ValueError(f"K must be ≥ 1, got {K}")
    if not gamma > 0:
        log.warning(f"Head requirements undefined for gamma={gamma}")
        inf = math.inf
        return HeadRequirements(inf, inf, inf, inf, inf, inf, inf)

    g0 = (2.0 * B_phi + math.log(K)) / gamma
    g = B2 + g0
    c = d * math.sqrt(T * d) * R ** 3
    train_root = 36.0 * c * (3.0 * math.sqrt(d) * R ** 2 * (3.0 * g0 + g) + 1.0) * g0 ** 2
    gen_root = 256.0 * c * (3.0 * math.sqrt(d) * R ** 2 * (3.0 * g0 + g) + 1.0) * g0 ** 2
    if B_phi > 0:
        realiz_root = 5.0 * c * B2 / B_phi * (3.0 * math.sqrt(d) * R ** 2 + 1.0) * g0 ** 2 * max(1.0, g0)
    else:
        realiz_root = math.inf
    cor_root = 256.0 * c * B2 * (3.0 * math.sqrt(d) * R ** 2 * (4.0 * g0 + B2) + 1.0) * g0 ** 2

    p3_root = math.inf
    if S is not None and gamma_star_value is not None and gamma_star_value > 0:
        p3_root = (4.0 * (2.0 * R ** 3 * T * (S + P) + math.sqrt(T) * R) / gamma_star_value
                   * math.sqrt(2.0 * math.log(n / delta)))

    return HeadRequirements(
        H_train=_squared_ceil(train_root),
        H_gen=_squared_ceil(gen_root),
        H_realiz=_squared_ceil(realiz_root),
        H_P3=_squared_ceil(p3_root),
        H_cor=_squared_ceil(cor_root),
        g0=g0,
        g=g,
    )

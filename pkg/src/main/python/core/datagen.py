"""
合成數據生成

- DM1 tokenized mixture：相關 token 為 μ_y，其餘為 ν_j + z
- DM2 planted attention：X ~ N(0, I)，標籤由固定注意力頭給出並按 margin 拒絕
- 線性基線 margin γ_lin
"""

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from src.main.python.core.attention import forward_single, pooling_decoder
from src.main.python.core.exceptions import RejectionRateError, create_rejection_rate_error
from src.main.python.core.linalg import make_rng
from src.main.python.models.mixture_spec import MixtureSpec, NoiseBounds
from src.main.python.models.model_params import HeadParams
from src.main.python.models.planted_spec import PlantedSpec
from src.main.python.models.token_data import Dataset, RelevantMask

log = logging.getLogger(__name__)

STREAM_DM1 = 1
STREAM_DM2 = 2
MAX_NOISE_ATTEMPTS = 10000


class MixtureSample(NamedTuple):
    data: Dataset
    masks: List[RelevantMask]
    bounds: NoiseBounds


@dataclass(frozen=True)
class LinearMarginReport:
    formula: float
    empirical_min: Optional[float] = None


@dataclass(frozen=True)
class _MixtureExample:
    X: np.ndarray
    y: int
    relevant: Tuple[int, ...]
    noise: np.ndarray              # 無關位置上的 z，(T−k)×d


# ---------------------------------------------------------------------------
# DM1
# ---------------------------------------------------------------------------

def _noise_within_caps(spec: MixtureSpec, z: np.ndarray) -> bool:
    if abs(z @ spec.mu_plus) > spec.Z_mu_cap or abs(z @ spec.mu_minus) > spec.Z_mu_cap:
        return False
    if np.max(np.abs(spec.nu @ z)) > spec.Z_nu_cap / spec.M:
        return False
    return np.linalg.norm(z) <= spec.Z_cap


def _draw_noise(spec: MixtureSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    """count 個噪聲向量；enforce_bounds 時逐個拒絕採樣直至滿足上限"""
    if not spec.enforce_bounds:
        return rng.normal(scale=spec.sigma, size=(count, spec.d))
    out = np.zeros((count, spec.d))
    for t in range(count):
        for attempt in range(MAX_NOISE_ATTEMPTS):
            z = rng.normal(scale=spec.sigma, size=spec.d)
            if _noise_within_caps(spec, z):
                out[t] = z
                break
        else:
            raise RejectionRateError(
                f"Noise caps rejected {MAX_NOISE_ATTEMPTS} consecutive draws; caps too small for sigma={spec.sigma}",
                details={'Z_mu_cap': spec.Z_mu_cap, 'Z_nu_cap': spec.Z_nu_cap, 'Z_cap': spec.Z_cap}
            )
    return out


def _dm1_example(spec: MixtureSpec, index: int) -> _MixtureExample:
    # 反對稱模式下相鄰兩個樣本共用同一隨機流，第二個翻轉標籤
    stream = index // 2 if spec.antithetic else index
    rng = make_rng(spec.seed, STREAM_DM1, stream)
    T, k = spec.T, spec.relevant_count

    y = 1 if rng.random() < 0.5 else -1
    if spec.antithetic and index % 2 == 1:
        y = -y

    if spec.fixed_mask is not None:
        relevant = spec.fixed_mask
    else:
        relevant = tuple(sorted(int(t) for t in rng.choice(T, size=k, replace=False)))
    irrelevant = [t for t in range(T) if t not in relevant]

    X = np.zeros((T, spec.d))
    X[list(relevant)] = spec.mu(y)
    j = rng.integers(0, spec.M, size=len(irrelevant))
    z = _draw_noise(spec, rng, len(irrelevant))
    if irrelevant:
        X[irrelevant] = spec.nu[j] + z
    return _MixtureExample(X=X, y=y, relevant=relevant, noise=z)


def empirical_noise_bounds(spec: MixtureSpec, noise: np.ndarray) -> NoiseBounds:
    """觀測到的噪聲最大值"""
    if noise.size == 0:
        return NoiseBounds.zero(spec.S)
    Z_mu = float(max(np.max(np.abs(noise @ spec.mu_plus)), np.max(np.abs(noise @ spec.mu_minus))))
    Z_nu = float(spec.M * np.max(np.abs(noise @ spec.nu.T)))
    Z = float(np.max(np.linalg.norm(noise, axis=1)))
    return NoiseBounds.from_components(Z_mu, Z_nu, Z, spec.S, spec.M)


def dm1_sample(spec: MixtureSpec, n: int, name: str = 'dm1', threads: int = 1) -> MixtureSample:
    """
    從 DM1 採樣 n 個樣本

    每個樣本使用由 (seed, index) 決定的獨立隨機流，因此結果與線程數無關。

    Returns:
        (Dataset, masks, NoiseBounds)；enforce_bounds 時 NoiseBounds 為先驗上限，否則為經驗最大值
    """
    if n < 1:
        raise ValueError(f"n must be ≥ 1, got {n}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            examples = list(pool.map(lambda i: _dm1_example(spec, i), range(n)))
    else:
        examples = [_dm1_example(spec, i) for i in range(n)]

    noise = np.concatenate([ex.noise for ex in examples]) if examples else np.zeros((0, spec.d))
    bounds = spec.caps() if spec.enforce_bounds else empirical_noise_bounds(spec, noise)
    data = Dataset(
        X=np.stack([ex.X for ex in examples]),
        y=np.array([ex.y for ex in examples], dtype=np.float64),
        declared_R=bounds.R,
        name=name,
    )
    masks = [RelevantMask(relevant=ex.relevant) for ex in examples]
    log.debug(f"DM1 sample '{name}': n={n}, R={data.R:.4f}, Z_mu={bounds.Z_mu:.4f}, Z_nu={bounds.Z_nu:.4f}")
    return MixtureSample(data=data, masks=masks, bounds=bounds)


# ---------------------------------------------------------------------------
# DM2
# ---------------------------------------------------------------------------

def default_planted_head(d: int, T: int) -> HeadParams:
    """
    DM2 缺省的 planted 頭

    d ≥ 3 時取 S=1、M=d−2 的 DM1 式 (U_opt, W_opt)；否則取 W=0 的平均池化頭。
    """
    if d < 3:
        u = np.eye(d)[0] / math.sqrt(T)
        return HeadParams(U=pooling_decoder(u, T), W=np.zeros((d, d)))
    M = d - 2
    eye = np.eye(d)
    mu_p, mu_m = eye[0], eye[1]
    W = np.outer(mu_p, mu_p) + np.outer(mu_m, mu_m) + sum(np.outer(eye[2 + l], mu_p + mu_m) for l in range(M))
    W = W / math.sqrt(2 * (M + 1))
    U = pooling_decoder(mu_p - mu_m, T) / math.sqrt(2 * T)
    return HeadParams(U=U, W=W)


def planted_head(spec: PlantedSpec) -> HeadParams:
    default = default_planted_head(spec.d, spec.T)
    return HeadParams(
        U=spec.U_star if spec.U_star is not None else default.U,
        W=spec.W_star if spec.W_star is not None else default.W,
    )


def dm2_sample(spec: PlantedSpec, n: int, name: str = 'dm2') -> Dataset:
    """
    從 DM2 採樣恰好 n 個被接受的樣本

    Raises:
        RejectionRateError: 最近 window 次嘗試中拒絕率超過 max_rejection
    """
    if n < 1:
        raise ValueError(f"n must be ≥ 1, got {n}")
    head = planted_head(spec)
    recent = deque(maxlen=spec.window)
    X = np.zeros((n, spec.T, spec.d))
    y = np.zeros(n)
    attempted = 0

    for i in range(n):
        rng = make_rng(spec.seed, STREAM_DM2, i)
        while True:
            x = rng.normal(size=(spec.T, spec.d))
            logit = forward_single(x, head)
            attempted += 1
            accepted = abs(logit) > spec.margin_floor
            recent.append(accepted)
            if len(recent) == spec.window and recent.count(False) > spec.max_rejection * spec.window:
                raise create_rejection_rate_error(i, attempted, spec.margin_floor)
            if accepted:
                X[i] = x
                y[i] = 1.0 if logit > 0 else -1.0
                break

    log.debug(f"DM2 sample '{name}': n={n}, attempts={attempted}, acceptance={n / attempted:.3f}")
    return Dataset(X=X, y=y, name=name)


# ---------------------------------------------------------------------------
# 線性基線
# ---------------------------------------------------------------------------

def gamma_lin_value(S: float, T: int, zeta: float, Z_mu: float) -> float:
    """γ_lin = (S√T/√2)(ζ − 2(1−ζ)Z_μ/S²)"""
    return S * math.sqrt(T) / math.sqrt(2.0) * (zeta - 2.0 * (1.0 - zeta) * Z_mu / S ** 2)


def oracle_linear_margins(data: Dataset, spec: MixtureSpec) -> np.ndarray:
    """y_i⟨U⋆/‖U⋆‖_F, X_i⟩，U⋆ = 1(μ₊ − μ₋)ᵀ"""
    u = spec.u_star / (spec.S * math.sqrt(2.0 * data.T))
    return data.y * np.einsum('ntd,d->n', data.X, u)


def gamma_lin(spec: MixtureSpec, bounds: NoiseBounds, data: Optional[Dataset] = None) -> LinearMarginReport:
    formula = gamma_lin_value(spec.S, spec.T, spec.zeta_effective, bounds.Z_mu)
    empirical = float(np.min(oracle_linear_margins(data, spec))) if data is not None else None
    return LinearMarginReport(formula=formula, empirical_min=empirical)

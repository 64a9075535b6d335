"""
自定義異常定義
提供分層的異常處理體系以支持更精確的錯誤處理
"""

import functools
import logging
from typing import Optional, Dict, Any, Sequence

import numpy as np

log = logging.getLogger(__name__)


class AttentionLabError(Exception):
    """
    基礎異常類
    所有自定義異常的基類
    """
    def __init__(self, message: str, error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}

        # 記錄異常
        log.error(f"[{self.error_code}] {self.message}", extra={'details': self.details})


class ConfigurationError(AttentionLabError):
    """配置相關異常"""
    pass


class DimensionError(AttentionLabError):
    """維度相關異常"""
    pass


class ShapeMismatchError(DimensionError):
    """矩陣形狀不一致"""
    pass


class IndexOutOfRangeError(DimensionError):
    """索引越界"""
    pass


class SizeLimitError(AttentionLabError):
    """稠密路徑超出尺寸上限"""
    pass


class NumericError(AttentionLabError):
    """數值計算相關異常"""
    pass


class NonFiniteError(NumericError):
    """出現 NaN 或 Inf"""
    pass


class DivergenceError(NumericError):
    """訓練發散"""
    pass


class DataGenerationError(AttentionLabError):
    """數據生成相關異常"""
    pass


class SpecValidationError(DataGenerationError):
    """生成器配置不合法"""
    pass


class RejectionRateError(DataGenerationError):
    """拒絕採樣的拒絕率過高"""
    pass


class CertificateError(AttentionLabError):
    """證書計算相關異常"""
    pass


class UndefinedRequirementError(CertificateError):
    """要求的量無定義（例如 γ ≤ 0）"""
    pass


class ExperimentError(AttentionLabError):
    """實驗編排相關異常"""
    pass


class UnknownFigureError(ExperimentError):
    """未知的重現目標"""
    pass


class OptimizerLoadError(ExperimentError):
    """優化器加載異常"""
    pass


class OutputError(AttentionLabError):
    """結果文件讀寫異常"""
    pass


# 異常工廠函數
def create_shape_mismatch_error(what: str, expected: Sequence[int], actual: Sequence[int]) -> ShapeMismatchError:
    """創建形狀不一致異常"""
    return ShapeMismatchError(
        f"Shape mismatch for {what}: expected {tuple(expected)}, got {tuple(actual)}",
        details={
            'operand': what,
            'expected_shape': list(expected),
            'actual_shape': list(actual)
        }
    )


def create_size_limit_error(dimension: int, limit: int, hint: Optional[str] = None) -> SizeLimitError:
    """創建尺寸上限異常"""
    message = f"Dense path requested for dimension {dimension}, limit is {limit}"
    if hint:
        message += f"; {hint}"
    return SizeLimitError(
        message,
        details={'dimension': dimension, 'limit': limit}
    )


def create_divergence_error(iteration: int, loss: float, threshold: float) -> DivergenceError:
    """創建訓練發散異常"""
    return DivergenceError(
        f"Training diverged at iteration {iteration}: loss {loss:.4g} exceeds {threshold:.4g}",
        details={
            'iteration': iteration,
            'loss': loss,
            'threshold': threshold
        }
    )


def create_rejection_rate_error(accepted: int, attempted: int, margin_floor: float) -> RejectionRateError:
    """創建拒絕率過高異常"""
    rate = 1.0 - accepted / attempted if attempted else 1.0
    return RejectionRateError(
        f"Rejection rate {rate:.2%} over the last {attempted} draws; margin_floor={margin_floor} is too large",
        details={
            'accepted': accepted,
            'attempted': attempted,
            'margin_floor': margin_floor
        }
    )


def create_optimizer_load_error(optimizer_name: str, error: Exception) -> OptimizerLoadError:
    """創建優化器加載異常"""
    return OptimizerLoadError(
        f"Failed to load optimizer '{optimizer_name}': {str(error)}",
        details={
            'optimizer_name': optimizer_name,
            'original_error': str(error),
            'original_error_type': type(error).__name__
        }
    )


# 異常處理裝飾器
def handle_numeric_errors(func):
    """數值錯誤處理裝飾器"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except AttentionLabError:
            raise
        except FloatingPointError as e:
            raise NonFiniteError(f"Floating point error in {func.__name__}: {str(e)}") from e
        except np.linalg.LinAlgError as e:
            raise NumericError(f"Linear algebra failure in {func.__name__}: {str(e)}") from e

    return wrapper


def handle_output_errors(func):
    """文件讀寫錯誤處理裝飾器"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except AttentionLabError:
            raise
        except (OSError, ValueError, KeyError) as e:
            raise OutputError(f"Output operation failed in {func.__name__}: {str(e)}",
                              details={'original_error_type': type(e).__name__}) from e

    return wrapper

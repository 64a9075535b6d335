import logging
import os
from typing import Optional
from dataclasses import dataclass
from decouple import Config, RepositoryEnv, RepositoryEmpty
from pathlib import Path

from src.main.python.core.exceptions import ConfigurationError

log = logging.getLogger(__name__)


@dataclass
class NumericsConfig:
    """數值容差與稠密路徑配置"""
    fd_step_grad: float = 1e-5
    fd_step_hess: float = 1e-4
    grad_check_tol: float = 1e-6
    hess_check_tol: float = 1e-4
    dense_hessian_limit: int = 2000
    power_iter_tol: float = 1e-10
    power_iter_max: int = 10000
    divergence_loss: float = 1e6

    def __post_init__(self):
        for name in ('fd_step_grad', 'fd_step_hess', 'grad_check_tol', 'hess_check_tol',
                     'power_iter_tol', 'divergence_loss'):
            if getattr(self, name) <= 0:
                raise ValueError(f"Invalid {name}: {getattr(self, name)}")
        if self.dense_hessian_limit < 1:
            raise ValueError(f"Invalid dense Hessian limit: {self.dense_hessian_limit}")
        if self.power_iter_max < 1:
            raise ValueError(f"Invalid power iteration cap: {self.power_iter_max}")


@dataclass
class ExperimentSettings:
    """實驗運行配置"""
    seed: int = 0
    threads: int = 1
    output_dir: str = 'results'
    delta: float = 0.05
    glqc_grid: int = 101
    monte_carlo_draws: int = 10000

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"Invalid seed: {self.seed}")
        if self.threads < 1:
            raise ValueError(f"Invalid thread count: {self.threads}")
        if not self.output_dir:
            raise ValueError("Output directory is required")
        if not (0 < self.delta < 1):
            raise ValueError(f"Invalid delta: {self.delta}")
        if self.glqc_grid < 3:
            raise ValueError(f"GLQC grid too small: {self.glqc_grid}")
        if self.monte_carlo_draws < 1:
            raise ValueError(f"Invalid Monte-Carlo draw count: {self.monte_carlo_draws}")


@dataclass
class LoggingConfig:
    """日誌配置"""
    level: str = 'INFO'
    format: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    file_enabled: bool = False
    file_path: Optional[str] = None

    def __post_init__(self):
        valid_levels = ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']
        if self.level not in valid_levels:
            raise ValueError(f"Invalid log level: {self.level}. Valid options: {valid_levels}")


@dataclass
class AppConfig:
    """應用程序總配置"""
    numerics: NumericsConfig
    experiment: ExperimentSettings
    logging: LoggingConfig


class ConfigManager:
    """統一配置管理器"""

    def __init__(self, env_file_path: Optional[str] = None):
        self._config: Optional[AppConfig] = None
        self._raw_config: Optional[Config] = None
        self._env_file_path = env_file_path or self._find_env_file()
        self._load_config()

    def _find_env_file(self) -> Optional[str]:
        """自動尋找 .env 文件"""
        current_dir = Path.cwd()
        for _ in range(5):  # 最多向上查找 5 層目錄
            env_file = current_dir / '.env'
            if env_file.exists():
                return str(env_file)
            current_dir = current_dir.parent
        return None

    def _load_config(self):
        """加載配置"""
        try:
            if self._env_file_path and Path(self._env_file_path).exists():
                self._raw_config = Config(RepositoryEnv(self._env_file_path))
                log.info(f"Loaded configuration from: {self._env_file_path}")
            else:
                # 沒有 .env 時只讀取環境變量與默認值
                self._raw_config = Config(RepositoryEmpty())
                log.info("No .env file found, using environment variables and defaults")

            self._config = AppConfig(
                numerics=self._load_numerics_config(),
                experiment=self._load_experiment_settings(),
                logging=self._load_logging_config()
            )

            log.info("Configuration loaded and validated successfully")

        except ValueError as e:
            raise ConfigurationError(f"Invalid configuration: {e}") from e
        except Exception as e:
            log.error(f"Failed to load configuration: {e}")
            raise ConfigurationError(f"Failed to load configuration: {e}") from e

    def _load_numerics_config(self) -> NumericsConfig:
        """加載數值配置"""
        return NumericsConfig(
            fd_step_grad=self._raw_config('FD_STEP_GRAD', cast=float, default=1e-5),
            fd_step_hess=self._raw_config('FD_STEP_HESS', cast=float, default=1e-4),
            grad_check_tol=self._raw_config('GRAD_CHECK_TOL', cast=float, default=1e-6),
            hess_check_tol=self._raw_config('HESS_CHECK_TOL', cast=float, default=1e-4),
            dense_hessian_limit=self._raw_config('DENSE_HESSIAN_LIMIT', cast=int, default=2000),
            power_iter_tol=self._raw_config('POWER_ITER_TOL', cast=float, default=1e-10),
            power_iter_max=self._raw_config('POWER_ITER_MAX', cast=int, default=10000),
            divergence_loss=self._raw_config('DIVERGENCE_LOSS', cast=float, default=1e6)
        )

    def _load_experiment_settings(self) -> ExperimentSettings:
        """加載實驗配置"""
        return ExperimentSettings(
            seed=self._raw_config('SEED', cast=int, default=0),
            threads=self._raw_config('THREADS', cast=int, default=1),
            output_dir=self._raw_config('OUTPUT_DIR', default='results'),
            delta=self._raw_config('DELTA', cast=float, default=0.05),
            glqc_grid=self._raw_config('GLQC_GRID', cast=int, default=101),
            monte_carlo_draws=self._raw_config('MONTE_CARLO_DRAWS', cast=int, default=10000)
        )

    def _load_logging_config(self) -> LoggingConfig:
        """加載日誌配置"""
        return LoggingConfig(
            level=self._raw_config('LOG_LEVEL', default='INFO'),
            format=self._raw_config('LOG_FORMAT', default='%(asctime)s - %(name)s - %(levelname)s - %(message)s'),
            file_enabled=self._raw_config('LOG_FILE_ENABLED', cast=bool, default=False),
            file_path=self._raw_config('LOG_FILE_PATH', default=None)
        )

    @property
    def config(self) -> AppConfig:
        """獲取配置對象"""
        if self._config is None:
            raise RuntimeError("Configuration not loaded")
        return self._config

    def get_raw_config(self, key: str, default=None, cast=None):
        """獲取原始配置值"""
        if self._raw_config is None:
            raise RuntimeError("Configuration not loaded")
        if cast is None:
            return self._raw_config(key, default=default)
        return self._raw_config(key, default=default, cast=cast)

    def reload(self):
        """重新加載配置"""
        log.info("Reloading configuration...")
        self._load_config()

    def validate_config(self) -> bool:
        """驗證配置的完整性"""
        try:
            # 基本驗證已在 dataclass 的 __post_init__ 中完成
            numerics = self.config.numerics
            if numerics.fd_step_hess < numerics.fd_step_grad:
                raise ValueError(
                    f"Hessian FD step ({numerics.fd_step_hess}) is smaller than gradient FD step ({numerics.fd_step_grad})"
                )

            experiment = self.config.experiment
            cpu_count = os.cpu_count() or 1
            if experiment.threads > cpu_count:
                log.warning(f"Thread count {experiment.threads} exceeds available CPUs ({cpu_count})")

            log.info("Configuration validation passed")
            return True

        except Exception as e:
            log.error(f"Configuration validation failed: {e}")
            return False


# 全局配置管理器實例
_config_manager: Optional[ConfigManager] = None


def get_config_manager(env_file_path: Optional[str] = None) -> ConfigManager:
    """獲取全局配置管理器實例"""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager(env_file_path)
    return _config_manager


def get_config() -> AppConfig:
    """快捷方式獲取配置"""
    return get_config_manager().config

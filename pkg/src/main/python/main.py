import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from src.main.python.core.calculus import gradcheck, hessian_check
from src.main.python.core.config import AppConfig, get_config_manager
from src.main.python.core.datagen import gamma_lin
from src.main.python.core.exceptions import (
    AttentionLabError, CertificateError, ConfigurationError, NumericError, SpecValidationError,
    UnknownFigureError
)
from src.main.python.core.linalg import make_rng
from src.main.python.core.ntk import (
    attention_margins, gamma_attn, gamma_star_for, good_init_check, head_requirements, multi_head_target,
    ntk_margin, ntk_margin_monte_carlo, realizability_witness, saturation_gamma, target_params_for,
    verify_saturation
)
from src.main.python.core.objective import loss_report, risk_gradcheck
from src.main.python.core.stability import avg_model_stability, check_recursion
from src.main.python.core.training import (
    good_init_bounds, phase_one, train, verify_descent, verify_theorem_bounds
)
from src.main.python.models.experiment_config import ExperimentConfig, PRESETS, merge_config, preset
from src.main.python.models.model_params import ModelParams
from src.main.python.models.train_config import OptimizerName
from src.main.python.repositories.dataset_repository import DatasetRepository
from src.main.python.repositories.params_repository import ParamsRepository
from src.main.python.repositories.report_repository import ReportRepository
from src.main.python.repositories.trace_repository import TraceRepository
from src.main.python.services.experiment_service import ExperimentService, reference_head, split_sample
from src.main.python.services.output_manager import OutputManager

log = logging.getLogger('AttentionLab')

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

COMMANDS = ('gen-data', 'train', 'margins', 'bounds', 'stability', 'gradcheck', 'reproduce', 'plot')
SATURATION_EPS = (0.1, 0.01)
STREAM_MONTE_CARLO = 4
STREAM_GRADCHECK = 5


class ExperimentRunner:
    """
    命令行各子命令的執行器

    特性：
    - 統一配置管理（.env + 命令行覆蓋）
    - 實驗配置 = 預設目標 + JSON 覆蓋
    - 所有輸出經 OutputManager 寫入 --out 目錄
    """

    def __init__(self, app_config: AppConfig, args: argparse.Namespace):
        self.config = app_config
        self.args = args
        self._setup_logging()

        settings = self.config.experiment
        self.seed = args.seed if args.seed is not None else settings.seed
        self.threads = args.threads if args.threads is not None else settings.threads
        self.output = OutputManager(args.out or settings.output_dir)

        self.datasets = DatasetRepository(self.output)
        self.params = ParamsRepository(self.output)
        self.traces = TraceRepository(self.output)
        self.reports = ReportRepository(self.output)
        self.experiments = ExperimentService(self.output, seed=self.seed, threads=self.threads)
        log.info(f"ExperimentRunner initialized: seed={self.seed}, threads={self.threads}, out={self.output.root}")

    def _setup_logging(self):
        """設置日誌系統"""
        logging_config = self.config.logging
        log_level = getattr(logging, logging_config.level.upper())
        logging.getLogger().setLevel(log_level)

        formatter = logging.Formatter(logging_config.format)
        for handler in logging.getLogger().handlers:
            handler.setFormatter(formatter)
            handler.setLevel(log_level)

        if logging_config.file_enabled and logging_config.file_path:
            file_handler = logging.FileHandler(logging_config.file_path)
            file_handler.setFormatter(formatter)
            file_handler.setLevel(log_level)
            logging.getLogger().addHandler(file_handler)
            log.info(f"File logging enabled: {logging_config.file_path}")

    # ------------------------------------------------------------------
    # 配置與數據
    # ------------------------------------------------------------------

    def _overrides(self) -> Dict[str, Any]:
        if not self.args.config:
            return {}
        try:
            with open(self.args.config, encoding='utf-8') as handle:
                doc = json.load(handle)
        except OSError as e:
            raise ConfigurationError(f"Cannot read config file {self.args.config}: {e}",
                                     details={'field': 'config'}) from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {self.args.config} is not valid JSON: {e}",
                                     details={'field': 'config'}) from e
        if not isinstance(doc, dict):
            raise ConfigurationError("Config file must hold a JSON object", details={'field': 'config'})
        return doc

    def _experiment_config(self) -> ExperimentConfig:
        figure = self.args.figure or 'context-gd'
        return ExperimentConfig.from_dict(merge_config(preset(figure), self._overrides()))

    @staticmethod
    def _require_mixture(config: ExperimentConfig, command: str):
        if config.kind != 'dm1':
            raise ConfigurationError(f"'{command}' needs a tokenized-mixture (dm1) data section",
                                     details={'field': 'data.kind'})

    def _theorem_target(self, config: ExperimentConfig, data, th0: ModelParams) -> Optional[ModelParams]:
        """θ = θ₀ + g₀(1/K)·θ̃⋆，γ 取 θ₀ 處的 NTK margin；非 DM1 數據時為 None"""
        if config.kind != 'dm1':
            return None
        K = config.train.K
        if K < 1:
            raise ConfigurationError("The theorem target needs K ≥ 1", details={'field': 'train.K'})
        target = target_params_for(config.data)
        report = good_init_check(data, th0, self.config.experiment.delta, target)
        try:
            witness = realizability_witness(report.B2, report.B_phi, report.ntk_margin_min)
        except CertificateError:
            log.warning(f"NTK margin at initialization is {report.ntk_margin_min:.4g}; no theorem target")
            return None
        th_star = multi_head_target([1.0] * th0.stored_heads, target, th0.replicas)
        return witness.target(th0, th_star, 1.0 / K)

    # ------------------------------------------------------------------
    # 子命令
    # ------------------------------------------------------------------

    def gen_data(self) -> Dict[str, Any]:
        config = self._experiment_config()
        sample = split_sample(config, self.seed, self.threads)
        train_data, test_data, train_masks, test_masks, _, bounds = sample
        prefix = f"data/{config.name}-seed{self.seed}"
        self.datasets.save_dataset(train_data, f"{prefix}-train.jsonl", train_masks)
        self.datasets.save_dataset(test_data, f"{prefix}-test.jsonl", test_masks)
        summary = {'n_train': train_data.n, 'n_test': test_data.n, 'R': train_data.R,
                   'noise_bounds': bounds.to_dict() if bounds is not None else None}
        self.reports.save_document(summary, f"{prefix}-summary.json")
        return summary

    def train(self) -> Dict[str, Any]:
        config = self._experiment_config()
        H = config.H_values[0]
        sample = split_sample(config, self.seed, self.threads)
        train_data, test_data = sample.train, sample.test
        th0 = ModelParams.zeros(config.data.T, config.data.d, 1, replicas=H)
        th_target = self._theorem_target(config, train_data, th0)
        planted = reference_head(sample)

        trace = train(train_data, th0, config.train, eval_data=test_data, masks=sample.train_masks,
                      planted=planted, th_target=th_target)
        prefix = f"train/{config.name}-H{H}-seed{self.seed}"
        self.traces.save_trace(trace, f"{prefix}.csv")
        self.params.save_params(trace.final, f"{prefix}-final.json")

        summary: Dict[str, Any] = {'H': H, 'eta': trace.eta, 'final_train_loss': trace.losses[-1],
                                   'final_test_loss': trace.rows[-1].test_loss}
        if config.train.optimizer == OptimizerName.GD:
            descent = verify_descent(trace)
            summary['descent'] = {'checked': descent.checked, 'skipped': descent.skipped,
                                  'violations': len(descent.violations), 'holds': descent.holds}
            if th_target is not None:
                theorem = verify_theorem_bounds(trace, th_target, train_data)
                summary['theorem'] = theorem.to_dict()
        self.reports.save_document(summary, f"{prefix}-summary.json")
        return summary

    def margins(self) -> Dict[str, Any]:
        config = self._experiment_config()
        self._require_mixture(config, 'margins')
        train_data, _, train_masks, _, spec, bounds = split_sample(config, self.seed, self.threads)
        target = target_params_for(spec)

        saturation = []
        for eps in SATURATION_EPS:
            Gamma = saturation_gamma(eps, spec.S, spec.M, spec.zeta_effective)
            report = verify_saturation(train_data, train_masks, Gamma, target, bounds, spec.S)
            margin_min = float(np.min(attention_margins(train_data, target, Gamma)))
            floor = gamma_attn(eps, spec.S, spec.T, bounds.Z_mu)
            saturation.append({
                'eps': eps, 'Gamma': Gamma, 'worst_mass': report.worst_mass, 'mean_mass': report.mean_mass,
                'noise_condition': report.noise_condition, 'attention_margin_min': margin_min,
                'gamma_attn': floor, 'mass_ok': report.worst_mass <= eps, 'margin_ok': margin_min >= floor,
            })

        H = max(config.H_values)
        first = phase_one(train_data, H, self.seed, spec=spec)
        th_star = multi_head_target(first.alpha, target)
        ntk = ntk_margin(train_data, first.theta1, th_star)
        monte_carlo = ntk_margin_monte_carlo(train_data, first.common_row, target, H,
                                             self.config.experiment.monte_carlo_draws,
                                             make_rng(self.seed, STREAM_MONTE_CARLO))
        linear = gamma_lin(spec, bounds, train_data)
        summary = {
            'saturation': saturation,
            'gamma_lin': {'formula': linear.formula, 'empirical_min': linear.empirical_min},
            'phase_one': {'H': H, 'P_empirical': first.P_empirical, 'common_row': first.common_row.tolist()},
            'ntk_margin_min': ntk.min,
            'ntk_margin_mean': ntk.mean,
            'monte_carlo': {'draws': monte_carlo.draws, 'min_mean': monte_carlo.min_mean,
                            'max_stderr': monte_carlo.max_stderr, 'worst_draw_min': monte_carlo.worst_draw_min},
            'gamma_star': gamma_star_for(spec, bounds, 0.0),
            'gamma_star_with_P': gamma_star_for(spec, bounds, first.P_empirical),
        }
        self.reports.save_document(summary, f"margins/{config.name}-seed{self.seed}.json")
        return summary

    def bounds(self) -> Dict[str, Any]:
        config = self._experiment_config()
        H = max(config.H_values)
        train_data, _, _, _, spec, noise = split_sample(config, self.seed, self.threads)
        th0 = ModelParams.zeros(config.data.T, config.data.d, 1, replicas=H)
        reports = [loss_report(train_data, th0)]
        summary: Dict[str, Any] = {'H': H, 'R': train_data.R}

        if config.kind == 'dm1':
            target = target_params_for(spec)
            first = phase_one(train_data, H, self.seed, spec=spec)
            reports.append(loss_report(train_data, first.theta1, th0))
            delta = self.config.experiment.delta
            init = good_init_check(train_data, first.theta1, delta, target, alpha=first.alpha,
                                   spec=spec, bounds=noise, P=first.P_empirical)
            summary['good_init'] = init.to_dict()
            R = max(train_data.R, 1.0)
            requirements = head_requirements(init.B2, init.B_phi, init.gamma, max(config.train.K, 1),
                                             train_data.n, delta, spec.d, spec.T, R, S=spec.S,
                                             P=first.P_empirical or 0.0,
                                             gamma_star_value=init.gamma_star_formula)
            summary['head_requirements'] = requirements.to_dict()
            if init.gamma > 0:
                corollary = good_init_bounds(init.B2, init.B_phi, init.gamma, max(config.train.K, 1),
                                             train_data.n, spec.d, spec.T, R, H)
                summary['good_init_bounds'] = corollary.to_dict()
            else:
                log.warning(f"gamma={init.gamma:.4g} is not positive; good-initialization bounds skipped")

        self.reports.save_loss_reports(reports, f"bounds/{config.name}-seed{self.seed}-loss.csv")
        self.reports.save_document(summary, f"bounds/{config.name}-seed{self.seed}.json")
        return summary

    def stability(self) -> Dict[str, Any]:
        config = self._experiment_config()
        H = config.H_values[0]
        sample = split_sample(config, self.seed, self.threads)
        train_data, test_data = sample.train, sample.test
        th0 = ModelParams.zeros(config.data.T, config.data.d, 1, replicas=H)
        th_target = self._theorem_target(config, train_data, th0)
        K = config.train.K
        checkpoints = sorted({k for k in (K // 4, K // 2, 3 * K // 4, K) if k > 0}) or [K]
        report = avg_model_stability(train_data, th0, config.train, test_data=test_data, th_target=th_target,
                                     threads=self.threads, checkpoints=checkpoints)
        prefix = f"stability/{config.name}-H{H}-seed{self.seed}"
        self.reports.save_stability_report(report, f"{prefix}.csv")

        recursion = (check_recursion(train_data, 0, th0, report.eta, K, grid=self.config.experiment.glqc_grid)
                     if train_data.n >= 2 else None)
        summary = {
            'H': H, 'eta': report.eta, 'n': report.n,
            'final': report.final.to_row(),
            'lemma_holds': report.lemma_holds,
            'recursion': None if recursion is None else {
                'index': recursion.index, 'violations': len(recursion.violations), 'holds': recursion.holds},
        }
        self.reports.save_document(summary, f"{prefix}.json")
        return summary

    def gradcheck(self) -> Dict[str, Any]:
        numerics = self.config.numerics
        rng = make_rng(self.seed, STREAM_GRADCHECK)
        grad = gradcheck(rng, h=numerics.fd_step_grad, tol=numerics.grad_check_tol)
        risk = risk_gradcheck(rng, h=numerics.fd_step_grad, tol=numerics.grad_check_tol)
        hess = hessian_check(rng, h=numerics.fd_step_hess, tol=numerics.hess_check_tol)
        print(f"gradient: max rel err {grad.max_rel_err:.3e} over {grad.instances} instances "
              f"({grad.failures} failures)")
        print(f"risk:     max rel err {risk.max_rel_err:.3e} over {risk.instances} instances "
              f"({risk.failures} failures)")
        print(f"hessian:  max rel err {hess.max_rel_err:.3e}, UU max {hess.max_UU_abs:.1e}, "
              f"symmetry residual {hess.max_symmetry_residual:.1e}")
        errors = {'grad_max_rel_err': grad.max_rel_err, 'risk_max_rel_err': risk.max_rel_err,
                  'hess_max_rel_err': hess.max_rel_err}
        if not (grad.passed and risk.passed and hess.passed):
            raise NumericError("Derivative check failed", details=errors)
        return errors

    def reproduce(self) -> Dict[str, Any]:
        figure = self.args.target or self.args.figure
        if not figure:
            raise ConfigurationError(f"reproduce needs a figure, one of {sorted(PRESETS)}",
                                     details={'field': 'figure'})
        return self.experiments.reproduce(figure, self._overrides())

    def plot(self) -> Dict[str, Any]:
        name = self.args.target or self.args.figure
        if not name:
            raise ConfigurationError("plot needs an experiment name", details={'field': 'figure'})
        return {'plots': self.experiments.replot(name)}

    def run(self, command: str) -> Dict[str, Any]:
        handler = getattr(self, command.replace('-', '_'))
        log.info(f"Running command: {command}")
        return handler()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="多頭 softmax 注意力的梯度下降實驗與證書")
    parser.add_argument('command', choices=COMMANDS, help="子命令")
    parser.add_argument('target', nargs='?', default=None, help="reproduce / plot 的目標名稱")
    parser.add_argument('--config', help="實驗配置 JSON（與預設目標合併）")
    parser.add_argument('--seed', type=int, help="頂層隨機種子")
    parser.add_argument('--out', help="輸出目錄")
    parser.add_argument('--threads', type=int, help="工作線程數")
    parser.add_argument('--figure', choices=sorted(PRESETS), help="預設目標")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主函數；返回退出碼"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config_manager = get_config_manager()
        app_config = config_manager.config
        if not config_manager.validate_config():
            raise ConfigurationError("Configuration validation failed")
        if args.seed is not None and args.seed < 0:
            raise ConfigurationError(f"Invalid seed: {args.seed}", details={'field': 'seed'})
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError(f"Invalid thread count: {args.threads}", details={'field': 'threads'})

        logging.basicConfig(
            level=getattr(logging, app_config.logging.level),
            format=app_config.logging.format
        )

        runner = ExperimentRunner(app_config, args)
        result = runner.run(args.command)
        log.info(f"Command '{args.command}' completed")
        if result:
            log.debug(json.dumps(result, default=str, sort_keys=True))
        return EXIT_OK

    except (ConfigurationError, SpecValidationError, UnknownFigureError) as e:
        field = e.details.get('field')
        print(f"Invalid configuration{f' ({field})' if field else ''}: {e.message}", file=sys.stderr)
        return EXIT_VALIDATION

    except NumericError as e:
        print(f"Numeric failure: {e.message}", file=sys.stderr)
        return EXIT_NUMERIC

    except AttentionLabError as e:
        print(f"Error: {e.message}", file=sys.stderr)
        if e.details:
            log.debug(f"Error details: {e.details}")
        return EXIT_ERROR

    except KeyboardInterrupt:
        log.info("Received interrupt signal, stopping")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

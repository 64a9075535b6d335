import copy
from dataclasses import dataclass, field
from typing import Any, Dict, List, Union

from src.main.python.core.exceptions import ConfigurationError, SpecValidationError, UnknownFigureError
from src.main.python.models.mixture_spec import MixtureSpec
from src.main.python.models.planted_spec import PlantedSpec
from src.main.python.models.train_config import TrainConfig

DATA_KINDS = ('dm1', 'dm2')
TOP_LEVEL_KEYS = {'name', 'data', 'model', 'train', 'trials', 'n_train', 'n_test', 'outputs', 'loss_threshold'}
MODEL_KEYS = {'H', 'T', 'd'}

# 重現目標的缺省配置
_CONTEXT_DATA = {'kind': 'dm1', 'd': 4, 'T': 10, 'M': 2, 'S': 2.0, 'zeta': 0.1, 'sigma': 0.1}
_PLANTED_DATA = {'kind': 'dm2', 'd': 5, 'T': 10, 'margin_floor': 0.2}

PRESETS: Dict[str, Dict[str, Any]] = {
    'context-gd': {
        'data': _CONTEXT_DATA, 'model': {'H': [1, 4, 16], 'T': 10, 'd': 4},
        'train': {'K': 1000, 'optimizer': 'gd', 'step_rule': 'explicit', 'eta': 1.0},
        'n_train': 100, 'n_test': 300, 'trials': 5,
    },
    'context-gd-sqrtH': {
        'data': _CONTEXT_DATA, 'model': {'H': [1, 4, 16], 'T': 10, 'd': 4},
        'train': {'K': 1000, 'optimizer': 'gd', 'step_rule': 'sqrtH_scaled', 'eta_base': 1.0},
        'n_train': 100, 'n_test': 300, 'trials': 5,
    },
    'context-adam': {
        'data': _CONTEXT_DATA, 'model': {'H': [1, 4, 16], 'T': 10, 'd': 4},
        'train': {'K': 1000, 'optimizer': 'adam', 'step_rule': 'explicit', 'eta': 0.06},
        'n_train': 100, 'n_test': 300, 'trials': 5,
    },
    'planted-gd': {
        'data': _PLANTED_DATA, 'model': {'H': [1, 4, 16], 'T': 10, 'd': 5},
        'train': {'K': 500, 'optimizer': 'gd', 'step_rule': 'sqrtH_scaled', 'eta_base': 0.5},
        'n_train': 1000, 'n_test': 3000, 'trials': 5,
    },
    'planted-momentum': {
        'data': _PLANTED_DATA, 'model': {'H': [1, 4, 16], 'T': 10, 'd': 5},
        'train': {'K': 500, 'optimizer': 'gd_momentum', 'step_rule': 'sqrtH_scaled', 'eta_base': 0.1,
                  'momentum': 0.9},
        'n_train': 1000, 'n_test': 3000, 'trials': 5,
    },
    'planted-adam': {
        'data': _PLANTED_DATA, 'model': {'H': [1, 4, 16], 'T': 10, 'd': 5},
        'train': {'K': 500, 'optimizer': 'adam', 'step_rule': 'explicit', 'eta': 0.06},
        'n_train': 1000, 'n_test': 3000, 'trials': 5,
    },
}


def preset(figure: str) -> Dict[str, Any]:
    if figure not in PRESETS:
        raise UnknownFigureError(f"Unknown figure '{figure}'. Available: {sorted(PRESETS)}",
                                 details={'field': 'figure', 'figure': figure})
    doc = copy.deepcopy(PRESETS[figure])
    doc['name'] = figure
    return doc


def merge_config(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """遞歸合併；覆蓋中的字典與 base 中的字典逐鍵合併"""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _as_number(value: Any, cast: type, field_name: str):
    """按 cast 轉換標量；失敗時報 ConfigurationError 並指出字段"""
    try:
        if isinstance(value, bool):
            raise TypeError("booleans are not numbers")
        number = cast(value)
        if cast is int and isinstance(value, float) and number != value:
            raise ValueError(f"{value} is not an integer")
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"{field_name} must be {cast.__name__}, got {value!r}",
                                 details={'field': field_name}) from e
    return number


@dataclass
class ExperimentConfig:
    """
    實驗配置 JSON 文檔

    {name, data: {kind, ...spec}, model: {H: [...], T, d}, train: {...}, trials, n_train, n_test,
     outputs, loss_threshold}
    """
    name: str
    data: Union[MixtureSpec, PlantedSpec]
    H_values: List[int]
    train: TrainConfig
    trials: int = 1
    n_train: int = 100
    n_test: int = 300
    outputs: str = 'results'
    loss_threshold: float = 0.3
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def kind(self) -> str:
        return 'dm1' if isinstance(self.data, MixtureSpec) else 'dm2'

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'ExperimentConfig':
        unknown = set(doc) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigurationError(f"Unknown experiment config fields: {sorted(unknown)}",
                                     details={'field': sorted(unknown)[0]})
        for required in ('data', 'model', 'train'):
            if required not in doc:
                raise ConfigurationError(f"Experiment config is missing '{required}'", details={'field': required})

        data_doc = dict(doc['data'])
        kind = data_doc.pop('kind', 'dm1')
        if kind not in DATA_KINDS:
            raise ConfigurationError(f"data.kind must be one of {DATA_KINDS}, got '{kind}'",
                                     details={'field': 'data.kind'})
        try:
            data = MixtureSpec.from_dict(data_doc) if kind == 'dm1' else PlantedSpec.from_dict(data_doc)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid data section: {e}", details={'field': 'data'}) from e
        except SpecValidationError as e:
            field_name = e.details.get('field')
            raise ConfigurationError(f"Invalid data section: {e.message}",
                                     details={'field': f"data.{field_name}" if field_name else 'data'}) from e

        model = doc['model']
        unknown = set(model) - MODEL_KEYS
        if unknown:
            raise ConfigurationError(f"Unknown model fields: {sorted(unknown)}",
                                     details={'field': f"model.{sorted(unknown)[0]}"})
        H_values = model.get('H', [1])
        if not isinstance(H_values, (list, tuple)):
            H_values = [H_values]
        H_values = [_as_number(H, int, 'model.H') for H in H_values]
        if not H_values or any(H < 1 for H in H_values):
            raise ConfigurationError(f"model.H must be a non-empty list of positive integers, got {H_values}",
                                     details={'field': 'model.H'})
        for key in ('T', 'd'):
            if key in model and model[key] != getattr(data, key):
                raise ConfigurationError(
                    f"model.{key}={model[key]} does not match data.{key}={getattr(data, key)}",
                    details={'field': f"model.{key}"}
                )

        train = TrainConfig.from_dict(doc['train'])
        config = cls(
            name=doc.get('name', 'experiment'),
            data=data,
            H_values=H_values,
            train=train,
            trials=_as_number(doc.get('trials', 1), int, 'trials'),
            n_train=_as_number(doc.get('n_train', 100), int, 'n_train'),
            n_test=_as_number(doc.get('n_test', 300), int, 'n_test'),
            outputs=doc.get('outputs', 'results'),
            loss_threshold=_as_number(doc.get('loss_threshold', 0.3), float, 'loss_threshold'),
            raw=copy.deepcopy(doc),
        )
        for key in ('trials', 'n_train', 'n_test'):
            if getattr(config, key) < 1:
                raise ConfigurationError(f"{key} must be ≥ 1, got {getattr(config, key)}", details={'field': key})
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = dict(self.data.to_dict())
        data['kind'] = self.kind
        return {
            'name': self.name,
            'data': data,
            'model': {'H': list(self.H_values), 'T': self.data.T, 'd': self.data.d},
            'train': self.train.to_dict(),
            'trials': self.trials,
            'n_train': self.n_train,
            'n_test': self.n_test,
            'outputs': self.outputs,
            'loss_threshold': self.loss_threshold,
        }

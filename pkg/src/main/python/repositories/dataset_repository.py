import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.main.python.core.exceptions import OutputError, handle_output_errors
from src.main.python.models.token_data import Dataset, RelevantMask
from src.main.python.services.output_manager import OutputManager

log = logging.getLogger(__name__)


def masks_path(relative: str) -> str:
    """<name>.jsonl → <name>.masks.jsonl"""
    base = relative[:-len('.jsonl')] if relative.endswith('.jsonl') else relative
    return f"{base}.masks.jsonl"


class DatasetRepository:
    """
    數據集的 JSON-lines 存取

    每行 {"y": ±1, "X": [[...], ...]}；DM1 的相關位置另存於 masks 旁車文件，每行 {"relevant": [...]}
    """

    def __init__(self, output: OutputManager):
        self.output = output

    @handle_output_errors
    def save_dataset(self, data: Dataset, relative: str,
                     masks: Optional[Sequence[RelevantMask]] = None) -> Path:
        with self.output.open_for_write(relative) as handle:
            for i in range(data.n):
                handle.write(json.dumps({'y': int(data.y[i]), 'X': data.X[i].tolist()}) + '\n')
        if masks is not None:
            if len(masks) != data.n:
                raise OutputError(f"Got {len(masks)} masks for {data.n} examples")
            with self.output.open_for_write(masks_path(relative)) as handle:
                for mask in masks:
                    handle.write(json.dumps({'relevant': list(mask.relevant)}) + '\n')
        log.info(f"Saved dataset '{data.name}' ({data.n} examples) to {self.output.path(relative)}")
        return self.output.path(relative)

    @handle_output_errors
    def load_dataset(self, relative: str, name: Optional[str] = None) -> Tuple[Dataset, Optional[List[RelevantMask]]]:
        path = self.output.path(relative)
        if not path.exists():
            raise OutputError(f"Dataset file not found: {path}", details={'path': str(path)})
        X, y = [], []
        with open(path, encoding='utf-8') as handle:
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                X.append(record['X'])
                y.append(record['y'])
        data = Dataset(X=np.array(X, dtype=np.float64), y=np.array(y, dtype=np.float64),
                       name=name or path.stem)

        masks = None
        sidecar = self.output.path(masks_path(relative))
        if sidecar.exists():
            with open(sidecar, encoding='utf-8') as handle:
                masks = [RelevantMask(relevant=tuple(json.loads(line)['relevant']))
                         for line in handle if line.strip()]
            if len(masks) != data.n:
                raise OutputError(f"Mask file {sidecar} has {len(masks)} rows for {data.n} examples")
        log.debug(f"Loaded dataset from {path}: n={data.n}, T={data.T}, d={data.d}")
        return data, masks

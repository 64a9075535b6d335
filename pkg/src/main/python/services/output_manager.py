import json
import logging
from contextlib import contextmanager
from pathlib import Path
from threading import Lock
from typing import Any, Dict, Iterator, TextIO

import numpy as np
import pandas as pd

from src.main.python.core.exceptions import OutputError, handle_output_errors

log = logging.getLogger(__name__)


def _json_default(value: Any) -> Any:
    # numpy 標量與陣列
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class OutputManager:
    """
    管理結果目錄下的文件寫入

    特性：
    - 每個文件一把鎖，並行試驗對同一文件的寫入被串行化
    - 寫入先落到臨時文件再替換，避免留下半寫文件
    - CSV 以固定格式輸出，相同輸入得到逐字節相同的文件
    """

    def __init__(self, root: str):
        self.root = Path(root)
        self._locks: Dict[Path, Lock] = {}
        self._locks_lock = Lock()

    def path(self, relative: str) -> Path:
        return self.root / relative

    def _lock_for(self, path: Path) -> Lock:
        with self._locks_lock:
            if path not in self._locks:
                self._locks[path] = Lock()
            return self._locks[path]

    @contextmanager
    def open_for_write(self, relative: str) -> Iterator[TextIO]:
        """獲取文件寫入句柄（上下文管理器）"""
        path = self.path(relative)
        lock = self._lock_for(path)
        with lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + '.tmp')
            try:
                with open(tmp, 'w', encoding='utf-8', newline='\n') as handle:
                    yield handle
                tmp.replace(path)
            except Exception:
                if tmp.exists():
                    tmp.unlink()
                raise
        log.debug(f"Wrote {path}")

    @handle_output_errors
    def write_text(self, relative: str, text: str) -> Path:
        with self.open_for_write(relative) as handle:
            handle.write(text)
        return self.path(relative)

    @handle_output_errors
    def write_json(self, relative: str, doc: Any) -> Path:
        with self.open_for_write(relative) as handle:
            json.dump(doc, handle, indent=2, sort_keys=True, default=_json_default)
            handle.write('\n')
        return self.path(relative)

    @handle_output_errors
    def write_frame(self, relative: str, frame: pd.DataFrame) -> Path:
        with self.open_for_write(relative) as handle:
            frame.to_csv(handle, index=False, float_format='%.10g', na_rep='')
        return self.path(relative)

    @handle_output_errors
    def read_json(self, relative: str) -> Any:
        path = self.path(relative)
        if not path.exists():
            raise OutputError(f"File not found: {path}", details={'path': str(path)})
        with open(path, encoding='utf-8') as handle:
            return json.load(handle)

    @handle_output_errors
    def read_frame(self, relative: str) -> pd.DataFrame:
        path = self.path(relative)
        if not path.exists():
            raise OutputError(f"File not found: {path}", details={'path': str(path)})
        return pd.read_csv(path)

    def exists(self, relative: str) -> bool:
        return self.path(relative).exists()

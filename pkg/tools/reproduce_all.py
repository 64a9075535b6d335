#!/usr/bin/env python3
"""
依次運行所有重現目標

每個目標寫出軌跡、聚合 CSV、SVG 圖與 summary.json，最後打印各 H 的迭代數與最終損失。
"""

import argparse
import logging
import os
import sys
import time

# 添加項目根目錄到 Python 路徑
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.main.python.core.config import get_config
from src.main.python.core.exceptions import AttentionLabError
from src.main.python.models.experiment_config import PRESETS
from src.main.python.services.experiment_service import ExperimentService
from src.main.python.services.output_manager import OutputManager


def print_summary(summary):
    print(f"\n📈 {summary['name']}")
    for row in summary['results']:
        losses = row['final_train_loss']
        print(f"   H={row['H']:<4} eta={row['eta']:<8.4g} "
              f"iters→{summary['loss_threshold']}: {row['mean_iters_to_threshold']:<8.1f} "
              f"final loss: {sum(losses) / len(losses):.4g}")


def main():
    parser = argparse.ArgumentParser(description="運行所有重現目標")
    parser.add_argument('--out', help="輸出目錄（默認取配置中的 OUTPUT_DIR）")
    parser.add_argument('--seed', type=int, help="頂層隨機種子")
    parser.add_argument('--threads', type=int, help="試驗並行線程數")
    parser.add_argument('--only', nargs='*', choices=sorted(PRESETS), help="只運行指定目標")
    args = parser.parse_args()

    config = get_config()
    logging.basicConfig(level=getattr(logging, config.logging.level), format=config.logging.format)
    settings = config.experiment
    output = OutputManager(args.out or settings.output_dir)
    service = ExperimentService(
        output,
        seed=args.seed if args.seed is not None else settings.seed,
        threads=args.threads if args.threads is not None else settings.threads,
    )

    figures = args.only or sorted(PRESETS)
    print(f"🚀 重現 {len(figures)} 個目標，輸出到 {output.root}")
    failed = []
    for figure in figures:
        started = time.time()
        try:
            print_summary(service.reproduce(figure))
            print(f"   ✅ 用時 {time.time() - started:.1f}s")
        except AttentionLabError as e:
            print(f"   ❌ {figure} 失敗: {e.message}")
            failed.append(figure)

    if failed:
        print(f"\n❌ 失敗目標: {', '.join(failed)}")
        return 1
    print("\n✅ 所有目標完成")
    return 0


if __name__ == "__main__":
    sys.exit(main())

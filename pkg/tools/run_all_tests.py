#!/usr/bin/env python3
"""
運行所有測試的腳本

包括：
- 單元測試（每個文件獨立進程）
- 集成驗收測試（可選，運行時間較長）
- 圖形趨勢檢查（可選，需要 --figures，單核約半小時）
"""

import os
import sys
import subprocess
import argparse
from pathlib import Path

# 設置項目路徑
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))
os.chdir(PROJECT_ROOT)

UNIT_TESTS = [
    ("src/test/unit/test_linalg.py", "線性代數原語"),
    ("src/test/unit/test_attention.py", "注意力前向"),
    ("src/test/unit/test_calculus.py", "梯度與 Hessian"),
    ("src/test/unit/test_objective.py", "經驗風險與常數"),
    ("src/test/unit/test_datagen.py", "數據生成"),
    ("src/test/unit/test_ntk.py", "NTK margin 與證書"),
    ("src/test/unit/test_optimizers.py", "優化器"),
    ("src/test/unit/test_training.py", "訓練與定理檢查"),
    ("src/test/unit/test_stability.py", "留一穩定性"),
    ("src/test/unit/test_models.py", "數據模型"),
    ("src/test/unit/test_repositories.py", "結果文件存取"),
    ("src/test/unit/test_config_manager.py", "配置管理器"),
    ("src/test/unit/test_cli.py", "命令行入口"),
]


def run_command(cmd, description, extra_env=None):
    """運行命令並處理結果"""
    print(f"\n{'='*60}")
    print(f"🧪 {description}")
    print(f"{'='*60}")
    print(f"執行命令: {' '.join(cmd)}")

    try:
        result = subprocess.run(
            cmd,
            capture_output=True,
            text=True,
            env={**os.environ, 'PYTHONPATH': str(PROJECT_ROOT), **(extra_env or {})}
        )

        if result.stdout:
            print(f"輸出:\n{result.stdout}")

        if result.stderr:
            print(f"錯誤:\n{result.stderr}")

        if result.returncode == 0:
            print(f"✅ {description} 成功")
            return True
        else:
            print(f"❌ {description} 失敗 (退出碼: {result.returncode})")
            return False

    except Exception as e:
        print(f"❌ 執行 {description} 時發生異常: {e}")
        return False


def run_unit_tests():
    """運行單元測試"""
    results = []
    for test_file, description in UNIT_TESTS:
        cmd = [sys.executable, test_file]
        results.append((description, run_command(cmd, description)))
    return results


def run_integration_tests(include_figures=False):
    """運行集成驗收測試"""
    cmd = [sys.executable, "src/test/integration/test_acceptance.py"]
    extra_env = {'ATTENTION_LAB_FIGURES': '1'} if include_figures else None
    return run_command(cmd, "集成驗收測試", extra_env)


def main():
    parser = argparse.ArgumentParser(description="運行注意力實驗套件的測試")
    parser.add_argument(
        "--unit-only",
        action="store_true",
        help="只運行單元測試（最快）"
    )
    parser.add_argument(
        "--figures",
        action="store_true",
        help="集成測試中包含圖形趨勢檢查（耗時較長）"
    )

    args = parser.parse_args()

    print(f"""
🚀 注意力實驗測試套件
{'='*60}
項目路徑: {PROJECT_ROOT}
Python 版本: {sys.version}
""")

    # 檢查虛擬環境
    if hasattr(sys, 'real_prefix') or (hasattr(sys, 'base_prefix') and sys.base_prefix != sys.prefix):
        print("✅ 虛擬環境已激活")
    else:
        print("⚠️  建議在虛擬環境中運行測試")

    total_tests = 0
    passed_tests = 0

    print(f"\n🔧 第一階段：單元測試")
    for description, success in run_unit_tests():
        total_tests += 1
        if success:
            passed_tests += 1

    if not args.unit_only:
        print(f"\n🔗 第二階段：集成驗收測試{'（含圖形趨勢）' if args.figures else ''}")
        if run_integration_tests(include_figures=args.figures):
            passed_tests += 1
        total_tests += 1
    else:
        print(f"\n🔗 第二階段：集成驗收測試（已跳過）")

    print(f"""
📋 測試總結
{'='*60}
總測試數: {total_tests}
通過測試: {passed_tests}
失敗測試: {total_tests - passed_tests}
成功率: {(passed_tests/total_tests*100) if total_tests > 0 else 0:.1f}%

{'✅ 所有測試通過！' if passed_tests == total_tests else '❌ 部分測試失敗'}
""")

    return 0 if passed_tests == total_tests else 1


if __name__ == "__main__":
    sys.exit(main())

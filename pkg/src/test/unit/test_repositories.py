"""
結果文件存取單元測試

所有測試寫入臨時目錄
"""

import json
import tempfile
import unittest

import numpy as np
import pandas as pd

from src.main.python.core.datagen import dm1_sample
from src.main.python.core.exceptions import OutputError
from src.main.python.core.training import train
from src.main.python.models.loss_report import LossReport
from src.main.python.models.mixture_spec import MixtureSpec
from src.main.python.models.model_params import ModelParams
from src.main.python.models.stability_report import StabilityReport, StabilityRow
from src.main.python.models.train_config import TrainConfig
from src.main.python.models.train_trace import TRACE_HEADER
from src.main.python.repositories.dataset_repository import DatasetRepository, masks_path
from src.main.python.repositories.params_repository import ParamsRepository
from src.main.python.repositories.report_repository import ReportRepository
from src.main.python.repositories.trace_repository import TraceRepository, aggregate_traces, trace_frame
from src.main.python.services.output_manager import OutputManager


def small_sample(n=5, seed=3):
    spec = MixtureSpec(d=4, T=4, M=2, S=1.0, zeta=0.25, sigma=0.1, seed=seed)
    return dm1_sample(spec, n)


class RepositoryTestCase(unittest.TestCase):
    """共用臨時輸出目錄"""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.output = OutputManager(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()


class TestOutputManager(RepositoryTestCase):
    """輸出管理器"""

    def test_json_with_numpy_values(self):
        """numpy 標量與陣列可以寫入 JSON"""
        self.output.write_json('a/b.json', {'x': np.float64(1.5), 'v': np.arange(3), 'k': np.int64(2)})
        self.assertEqual(self.output.read_json('a/b.json'), {'k': 2, 'v': [0, 1, 2], 'x': 1.5})

    def test_missing_file(self):
        """讀取不存在的文件報 OutputError"""
        with self.assertRaises(OutputError):
            self.output.read_json('missing.json')
        with self.assertRaises(OutputError):
            self.output.read_frame('missing.csv')

    def test_failed_write_leaves_no_file(self):
        """寫入中途失敗時不留下目標文件或臨時文件"""
        with self.assertRaises(RuntimeError):
            with self.output.open_for_write('partial.txt') as handle:
                handle.write('half')
                raise RuntimeError('boom')
        self.assertFalse(self.output.exists('partial.txt'))
        self.assertFalse(self.output.exists('partial.txt.tmp'))

    def test_frame_format_is_stable(self):
        """相同數據兩次寫出的 CSV 逐字節相同"""
        frame = pd.DataFrame({'iter': [0, 1], 'value': [1.0 / 3.0, None]})
        first = self.output.write_frame('one.csv', frame).read_bytes()
        second = self.output.write_frame('two.csv', frame).read_bytes()
        self.assertEqual(first, second)
        self.assertEqual(first.decode(), 'iter,value\n0,0.3333333333\n1,\n')


class TestDatasetRepository(RepositoryTestCase):
    """數據集 JSON-lines"""

    def test_save_and_load_with_masks(self):
        """保存後讀回，masks 旁車文件一併讀回"""
        sample = small_sample()
        repo = DatasetRepository(self.output)
        repo.save_dataset(sample.data, 'train.jsonl', sample.masks)
        self.assertTrue(self.output.exists(masks_path('train.jsonl')))
        data, masks = repo.load_dataset('train.jsonl')
        np.testing.assert_array_equal(data.X, sample.data.X)
        np.testing.assert_array_equal(data.y, sample.data.y)
        self.assertEqual(masks, sample.masks)

    def test_line_format(self):
        """每行一個 {y, X} 記錄"""
        sample = small_sample(n=2)
        repo = DatasetRepository(self.output)
        path = repo.save_dataset(sample.data, 'data.jsonl')
        lines = path.read_text().splitlines()
        self.assertEqual(len(lines), 2)
        record = json.loads(lines[0])
        self.assertEqual(set(record), {'y', 'X'})
        self.assertEqual(len(record['X']), 4)
        _, masks = repo.load_dataset('data.jsonl')
        self.assertIsNone(masks)

    def test_mask_count_mismatch(self):
        """masks 數目與樣本數不符時報錯"""
        sample = small_sample()
        with self.assertRaises(OutputError):
            DatasetRepository(self.output).save_dataset(sample.data, 'bad.jsonl', sample.masks[:2])

    def test_masks_path(self):
        self.assertEqual(masks_path('dir/train.jsonl'), 'dir/train.masks.jsonl')


class TestParamsRepository(RepositoryTestCase):
    """參數 checkpoint"""

    def test_save_and_load(self):
        """綁定副本的參數讀回後不變"""
        rng = np.random.default_rng(0)
        th = ModelParams(rng.standard_normal((1, 4, 3)), rng.standard_normal((1, 3, 3)), replicas=5)
        repo = ParamsRepository(self.output)
        repo.save_params(th, 'ckpt/theta.json')
        again = repo.load_params('ckpt/theta.json')
        self.assertTrue(again.allclose(th))
        self.assertEqual(again.H, 5)


class TestTraceRepository(RepositoryTestCase):
    """訓練軌跡與聚合"""

    def setUp(self):
        super().setUp()
        sample = small_sample(n=6)
        th0 = ModelParams.zeros(4, 4, 1, replicas=2)
        self.traces = [train(sample.data, th0, TrainConfig(K=4, eta=eta)) for eta in (0.5, 1.0)]

    def test_header_and_rows(self):
        """軌跡 CSV 使用固定表頭，每個記錄點一行"""
        repo = TraceRepository(self.output)
        repo.save_trace(self.traces[0], 'trace.csv')
        frame = repo.load_trace('trace.csv')
        self.assertEqual(list(frame.columns), TRACE_HEADER)
        self.assertEqual(list(frame['iter']), [0, 1, 2, 3, 4])

    def test_unexpected_header(self):
        """表頭不符時報錯"""
        self.output.write_frame('other.csv', pd.DataFrame({'a': [1]}))
        with self.assertRaises(OutputError):
            TraceRepository(self.output).load_trace('other.csv')

    def test_aggregate_statistics(self):
        """均值與樣本標準差；單次試驗時標準差為零"""
        frames = [trace_frame(t) for t in self.traces]
        agg = aggregate_traces(frames)
        self.assertEqual(list(agg['iter']), [0, 1, 2, 3, 4])
        losses = np.array([f['train_loss'].to_numpy() for f in frames])
        np.testing.assert_allclose(agg['train_loss_mean'], losses.mean(axis=0))
        np.testing.assert_allclose(agg['train_loss_std'], losses.std(axis=0, ddof=1))
        single = aggregate_traces(frames[:1])
        self.assertTrue((single['train_loss_std'] == 0.0).all())
        with self.assertRaises(OutputError):
            aggregate_traces([])

    def test_save_aggregate(self):
        """聚合 CSV 的列為 iter 與每個指標的 mean / std"""
        repo = TraceRepository(self.output)
        repo.save_aggregate([trace_frame(t) for t in self.traces], 'agg.csv')
        frame = self.output.read_frame('agg.csv')
        self.assertEqual(frame.columns[0], 'iter')
        self.assertIn('train_loss_mean', frame.columns)
        self.assertIn('align_U_std', frame.columns)


class TestReportRepository(RepositoryTestCase):
    """報告文件"""

    def test_loss_reports(self):
        reports = [LossReport(value=0.6, grad_norm=0.2, beta1=1.0, beta2=2.0, beta3=2.0, kappa=1.0)]
        ReportRepository(self.output).save_loss_reports(reports, 'loss.csv')
        frame = self.output.read_frame('loss.csv')
        self.assertEqual(list(frame.columns), LossReport.CSV_HEADER)
        self.assertAlmostEqual(frame['value'][0], 0.6)

    def test_stability_report(self):
        report = StabilityReport(rows=[StabilityRow(K=0, avg_stability=0.0), StabilityRow(K=5, avg_stability=0.1)],
                                 eta=0.5, n=10)
        ReportRepository(self.output).save_stability_report(report, 'stab.csv')
        frame = self.output.read_frame('stab.csv')
        self.assertEqual(list(frame.columns), StabilityRow.CSV_HEADER)
        self.assertEqual(list(frame['K']), [0, 5])
        self.assertTrue(frame['lemma_rhs'].isna().all())

    def test_document(self):
        ReportRepository(self.output).save_document({'passed': True, 'gamma': np.float64(0.25)}, 'cert.json')
        self.assertEqual(self.output.read_json('cert.json'), {'gamma': 0.25, 'passed': True})


if __name__ == '__main__':
    unittest.main()

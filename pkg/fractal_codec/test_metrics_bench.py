import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from fractal_codec import (Benchmark, EncoderConfig, SMode, TopK, encode, proposition_check, psnr, roundtrip,
                           run_benchmark, s_histogram)
from fractal_codec.metrics_bench import CSV_HEADER, bench_levels, proposition_holds, write_histograms
from fractal_codec.tests import images


class TestPsnr(unittest.TestCase):
    def test_identical(self) -> None:
        image = images.texture(16, 16)

        self.assertEqual(math.inf, psnr(image, image))

    def test_opposites(self) -> None:
        self.assertEqual(0.0, psnr(images.constant(8, 8, gray=0), images.constant(8, 8, gray=255)))

    def test_unit_mse(self) -> None:
        self.assertAlmostEqual(48.1308, psnr(images.constant(8, 8, gray=10), images.constant(8, 8, gray=11)),
                               places=4)

    def test_symmetric(self) -> None:
        a = images.texture(16, 16, seed=1)
        b = images.texture(16, 16, seed=2)

        self.assertEqual(psnr(a, b), psnr(b, a))

    def test_dimension_mismatch(self) -> None:
        with self.assertRaises(ValueError):
            psnr(images.constant(8, 8), images.constant(16, 8))


class TestBenchmark(unittest.TestCase):
    def test_single_constant_image(self) -> None:
        rows = run_benchmark([('flat', images.constant(16, 16))], [256], [SMode.PREDEFINED], EncoderConfig())

        self.assertEqual(1, len(rows))
        self.assertEqual('', rows[0]['error'])
        self.assertGreater(rows[0]['cr'], 1.0)
        self.assertGreaterEqual(rows[0]['psnr'], 48.0)
        self.assertLess(rows[0]['seconds'], 1.0)

    def test_csv(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            output = Path(directory) / 'results.csv'

            rows = run_benchmark([('tex', images.texture(32, 32))], [32, 8], [SMode.PREDEFINED, SMode.SAMPLED10],
                                 EncoderConfig(), output)

            lines = output.read_text().splitlines()
        self.assertEqual(','.join(CSV_HEADER), lines[0])
        self.assertEqual('image,pool_size,mode,cr,seconds,psnr,leaves_16,leaves_8,leaves_4,leaves_2', lines[0])
        self.assertEqual(5, len(lines))
        self.assertEqual([('tex', 32, 'predefined'), ('tex', 32, 'sampled10'), ('tex', 8, 'predefined'),
                          ('tex', 8, 'sampled10')], [(r['image'], r['pool_size'], r['mode']) for r in rows])

    def test_rows_match_roundtrip(self) -> None:
        image = images.texture(32, 32)
        config = EncoderConfig(pool_selection=TopK(16))

        rows = run_benchmark([('tex', image)], [16], [SMode.SAMPLED10], config)
        direct = roundtrip(image, EncoderConfig(pool_selection=TopK(16), s_mode=SMode.SAMPLED10))

        self.assertEqual(direct.psnr, rows[0]['psnr'])
        self.assertEqual(direct.cr, rows[0]['cr'])
        self.assertEqual(direct.stats.leaves_per_level, rows[0]['leaves'])

    def test_failed_row_does_not_stop_the_run(self) -> None:
        uneven = images.constant(48, 48)

        rows = Benchmark(EncoderConfig(max_range=32)).main([('tiny', uneven), ('tex', images.texture(64, 64))],
                                                          [8], [SMode.PREDEFINED])

        self.assertEqual(2, len(rows))
        self.assertEqual('', rows[1]['error'])
        self.assertEqual(['tiny', '8', 'predefined', 'error', 'error', 'error'], Benchmark.csv_row(rows[0])[:6])

    def test_level_32_leaves_get_a_column(self) -> None:
        config = EncoderConfig(max_range=32)

        with tempfile.TemporaryDirectory() as directory:
            output = Path(directory) / 'results.csv'
            run_benchmark([('flat', images.constant(64, 64))], [8], [SMode.PREDEFINED], config, output)
            lines = output.read_text().splitlines()

        self.assertEqual((32, 16, 8, 4, 2), bench_levels(config))
        self.assertEqual((16, 8, 4, 2), bench_levels(EncoderConfig(min_range=4)))
        self.assertTrue(lines[0].endswith(',leaves_32,leaves_16,leaves_8,leaves_4,leaves_2'))
        self.assertTrue(lines[1].endswith(',4,0,0,0,0'))

    def test_inf_is_rendered(self) -> None:
        row = Benchmark.csv_row({'image': 'a', 'pool_size': 1, 'mode': 'predefined', 'cr': 2.0, 'seconds': 0.5,
                                 'psnr': math.inf, 'leaves': {16: 1}, 'error': ''})

        self.assertEqual(['a', '1', 'predefined', '2.0000', '0.5000', 'inf', '1', '0', '0', '0'], row)

    def test_smaller_tolerance_costs_ratio(self) -> None:
        image = images.texture(64, 64)

        loose = roundtrip(image, EncoderConfig(rms_tolerance=20.0))
        tight = roundtrip(image, EncoderConfig(rms_tolerance=4.0))

        self.assertLessEqual(tight.cr, loose.cr)
        self.assertGreaterEqual(tight.psnr, loose.psnr)


class TestHistogram(unittest.TestCase):
    def test_constant_image(self) -> None:
        histograms = s_histogram(images.constant(64, 64), EncoderConfig())

        self.assertEqual(16, histograms[16].counts[0])
        self.assertEqual(16, sum(histograms[16].counts))
        self.assertEqual(0.0, histograms[16].median)
        self.assertTrue(math.isnan(histograms[2].median))

    def test_totals_match_leaves(self) -> None:
        image = images.texture(64, 64)
        config = EncoderConfig(s_mode=SMode.LEAST_SQUARES)

        histograms = s_histogram(image, config)
        code, _ = encode(image, config)

        for level, count in code.leaves_per_level().items():
            self.assertEqual(count, sum(histograms[level].counts))
            self.assertEqual(20, len(histograms[level].counts))
            self.assertEqual(0.0, histograms[level].edges[0])
            self.assertEqual(1.0, histograms[level].edges[-1])

    def test_checkerboard_needs_high_contrast(self) -> None:
        histograms = s_histogram(images.checkerboard(32, 32, cell=3), EncoderConfig(rms_tolerance=0.0))

        self.assertGreater(sum(histograms[2].counts[10:]), 0)

    def test_write_histograms(self) -> None:
        histograms = s_histogram(images.texture(32, 32), EncoderConfig())

        with tempfile.TemporaryDirectory() as directory:
            paths = write_histograms(Path(directory) / 'hist', histograms)
            names = [path.name for path in paths]
            first = paths[0].read_text().splitlines()

        self.assertEqual(['hist_16.csv', 'hist_8.csv', 'hist_4.csv', 'hist_2.csv'], names)
        self.assertEqual('bin_lo,bin_hi,count', first[0])
        self.assertEqual('0.00,0.05,', first[1][:10])
        self.assertEqual(21, len(first))


class TestProposition(unittest.TestCase):
    def test_equal_scales_hold(self) -> None:
        y = np.random.default_rng(3).integers(1, 256, size=64)

        self.assertTrue(proposition_holds(y, 0.37, 0.37))

    def test_constant_input_holds(self) -> None:
        self.assertTrue(proposition_holds(np.full(64, 77), 0.2, 0.9))

    def test_deterministic_report(self) -> None:
        first = proposition_check(2000, 256, seed=5)
        second = proposition_check(2000, 256, seed=5)

        self.assertEqual(first, second)
        self.assertEqual(2000, first.trials)
        self.assertGreater(first.frequency, 0.5)
        self.assertLessEqual(first.holds, first.trials)

    def test_full_report(self) -> None:
        report = proposition_check(10000, 256, seed=0)

        print(f"proposition held in {report.holds} of {report.trials} trials ({report.frequency:.4f})")
        self.assertEqual((10000, 256, 0), (report.trials, report.n, report.seed))
        self.assertAlmostEqual(report.holds / report.trials, report.frequency)
        self.assertGreater(report.frequency, 0.95)

    def test_rejects_no_trials(self) -> None:
        with self.assertRaises(ValueError):
            proposition_check(0, 256, seed=0)


if __name__ == '__main__':
    unittest.main()

import unittest
from dataclasses import replace

import numpy as np

from fractal_codec import (DecodeError, DecodeSettings, EncoderConfig, FractalCode, SMode, decode, encode,
                           iterate_once, psnr)
from fractal_codec.tests import images


class TestDecode(unittest.TestCase):
    def setUp(self) -> None:
        self.image = images.gradient(64, 64)
        self.code, _ = encode(self.image, EncoderConfig(rms_tolerance=8.0))

    def test_constant_image(self) -> None:
        original = images.constant(64, 64, gray=100)
        code, _ = encode(original)

        result = decode(code)

        self.assertLessEqual(int(np.max(np.abs(result.image.data.astype(int) - 100))), 1)
        self.assertEqual(len(set(result.image.data.ravel().tolist())), 1)
        self.assertGreaterEqual(psnr(original, result.image), 48.13)

    def test_gradient_quality(self) -> None:
        result = decode(self.code)

        self.assertGreaterEqual(psnr(self.image, result.image), 28.0)

    def test_second_iteration_contracts(self) -> None:
        result = decode(self.code, DecodeSettings(iterations=2, convergence_epsilon=0.0))

        self.assertEqual(2, len(result.deltas))
        self.assertLessEqual(result.deltas[1], result.deltas[0])

    def test_converges(self) -> None:
        code, _ = encode(self.image, EncoderConfig(s_max=0.9))

        result = decode(code, DecodeSettings(iterations=16))

        self.assertLess(result.final_delta, 1.0)
        tail = result.deltas[1:]
        self.assertEqual(sorted(tail, reverse=True), tail)

    def test_early_stop(self) -> None:
        result = decode(self.code, DecodeSettings(iterations=50, convergence_epsilon=0.5))

        self.assertLess(result.iterations_used, 50)
        self.assertLess(result.final_delta, 0.5)

    def test_fixed_point(self) -> None:
        limit = decode(self.code, DecodeSettings(iterations=40)).image

        following = iterate_once(limit, self.code)

        self.assertLessEqual(int(np.max(np.abs(following.data.astype(int) - limit.data.astype(int)))), 1)

    def test_two_passes_equal_two_iterations(self) -> None:
        start = images.constant(64, 64, gray=128)

        twice = iterate_once(iterate_once(start, self.code), self.code)

        self.assertEqual(decode(self.code, DecodeSettings(iterations=2, convergence_epsilon=0.0)).image, twice)

    def test_zero_contrast_code_ignores_the_start(self) -> None:
        code, _ = encode(images.constant(64, 64, gray=100), EncoderConfig(s_mode=SMode.LEAST_SQUARES))
        flat = replace(code, records=tuple(replace(r, s_index=0) for r in code.records))

        for start in (images.random_image(64, 64, seed=4), images.constant(64, 64, gray=3)):
            result = iterate_once(start, flat)
            self.assertEqual(iterate_once(images.constant(64, 64, gray=0), flat), result)

    def test_record_order_does_not_matter(self) -> None:
        shuffled = replace(self.code, records=tuple(reversed(self.code.records)))
        start = images.texture(64, 64)

        self.assertEqual(iterate_once(start, self.code), iterate_once(start, shuffled))

    def test_dimension_mismatch(self) -> None:
        with self.assertRaises(DecodeError):
            iterate_once(images.constant(32, 32), self.code)

    def test_domain_outside_image(self) -> None:
        record = replace(self.code.records[0], domain_x=63)
        broken: FractalCode = replace(self.code, records=(record,) + self.code.records[1:])

        with self.assertRaises(DecodeError):
            decode(broken)

    def test_records_must_tile(self) -> None:
        with self.assertRaises(DecodeError):
            decode(replace(self.code, records=self.code.records[1:]))

    def test_overlapping_records_are_rejected(self) -> None:
        code, _ = encode(images.constant(64, 64, gray=100))
        records = list(code.records)
        records[1] = records[0]

        with self.assertRaisesRegex(DecodeError, "256 pixels uncovered"):
            decode(replace(code, records=tuple(records)))
        with self.assertRaises(DecodeError):
            iterate_once(images.constant(64, 64), replace(code, records=tuple(records)))

    def test_detailed_image_settles_within_one_level(self) -> None:
        # Rounding every iterate can leave a +-1 cycle on busy content instead of an exact fixed point.
        code, _ = encode(images.texture(128, 128))

        result = decode(code, DecodeSettings(iterations=24, convergence_epsilon=0.0))

        self.assertEqual(24, result.iterations_used)
        self.assertGreater(result.deltas[0], 10.0)
        self.assertLessEqual(result.final_delta, 1.0)
        self.assertLessEqual(max(result.deltas[-4:]), 1.0)


if __name__ == '__main__':
    unittest.main()

import math
import unittest

import numpy as np

from quantum_trilateration.exceptions import DomainError
from quantum_trilateration.optics import forward_model
from quantum_trilateration.scene import PsfModel, Scene
from quantum_trilateration.synth import (
    NoiseModel,
    RngStream,
    apply_noise,
    default_layout,
    fit_stream,
    noise_stream,
    sample_scene,
    scene_stream,
    uniform_disk,
)
from tests.oracles import REF_ALPHA, REF_X1, REF_X2, REF_Y1, REF_Y2


def _reference_exact():
    scene = Scene.from_params(REF_X1, REF_Y1, REF_X2, REF_Y2, REF_ALPHA)
    return forward_model(scene, default_layout(), PsfModel(1.0))


class TestRngStream(unittest.TestCase):
    def test_same_key_same_numbers(self):
        a = RngStream(7, 3, (1, 2)).generator().random(10)
        b = RngStream(7, 3, (1, 2)).generator().random(10)
        np.testing.assert_array_equal(a, b)

    def test_distinct_keys_differ(self):
        base = RngStream(7, 0).generator().random(4)
        for other in (RngStream(8, 0), RngStream(7, 1), RngStream(7, 0, (1,))):
            self.assertFalse(np.array_equal(base, other.generator().random(4)))

    def test_matches_philox_seed_sequence(self):
        expected = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(42, spawn_key=(1, 5, 2)))
        ).random(5)
        np.testing.assert_array_equal(noise_stream(42, 5, 2).generator().random(5), expected)

    def test_child_extends_key(self):
        child = fit_stream(9, 4).child(6)
        self.assertEqual(child.spawn_key, (2, 4, 0, 6))

    def test_stream_helpers(self):
        self.assertEqual(scene_stream(1, 3).spawn_key, (0, 3))
        self.assertEqual(noise_stream(1, 3, 8).spawn_key, (1, 3, 8))
        self.assertEqual(fit_stream(1, 3).spawn_key, (2, 3, 0))

    def test_rejects_bad_seed(self):
        for bad in (-1, 2 ** 64):
            with self.assertRaises(DomainError):
                RngStream(bad)
        with self.assertRaises(DomainError):
            RngStream(0, -1)

    def test_largest_seed_accepted(self):
        RngStream(2 ** 64 - 1).generator().random()


class TestNoiseModel(unittest.TestCase):
    def test_from_counts(self):
        self.assertAlmostEqual(NoiseModel.from_counts(10000).eta, 0.01, places=15)

    def test_bounds(self):
        NoiseModel(0.0)
        NoiseModel(1.0)
        for bad in (-0.01, 1.01, math.nan):
            with self.assertRaises(DomainError):
                NoiseModel(bad)
        with self.assertRaises(DomainError):
            NoiseModel.from_counts(0)


class TestApplyNoise(unittest.TestCase):
    def setUp(self):
        self.exact = _reference_exact()

    def test_zero_eta_is_identity(self):
        noisy = apply_noise(self.exact, NoiseModel(0.0), RngStream(5))
        self.assertEqual(noisy.g1, self.exact.g1)
        self.assertEqual(noisy.g2, self.exact.g2)
        self.assertTrue(noisy.noisy)

    def test_draws_follow_seed_and_value_order(self):
        z = np.random.Generator(np.random.Philox(np.random.SeedSequence(42, spawn_key=(0,)))).standard_normal(6)
        noisy = apply_noise(self.exact, NoiseModel(0.1), RngStream(42))
        np.testing.assert_allclose(noisy.as_vector(), self.exact.as_vector() * (1.0 + 0.1 * z), rtol=1e-15)

    def test_deterministic(self):
        a = apply_noise(self.exact, NoiseModel(0.05), noise_stream(3, 0, 4))
        b = apply_noise(self.exact, NoiseModel(0.05), noise_stream(3, 0, 4))
        self.assertEqual(a, b)

    def test_same_stream_is_paired_across_eta(self):
        small = apply_noise(self.exact, NoiseModel(0.01), noise_stream(3, 1, 2)).as_vector()
        large = apply_noise(self.exact, NoiseModel(0.1), noise_stream(3, 1, 2)).as_vector()
        exact = self.exact.as_vector()
        np.testing.assert_allclose((large - exact), 10.0 * (small - exact), rtol=1e-9, atol=1e-17)

    def test_relative_spread(self):
        eta = 0.05
        exact = self.exact.as_vector()
        ratios = np.array([
            apply_noise(self.exact, NoiseModel(eta), noise_stream(11, 0, t)).as_vector() / exact - 1.0
            for t in range(2000)
        ])
        for column in ratios.T:
            self.assertAlmostEqual(float(np.mean(column)), 0.0, delta=0.005)
            self.assertAlmostEqual(float(np.std(column)), eta, delta=0.005)

    def test_multiplier_moments_over_1e5_draws(self):
        exact = self.exact.as_vector()
        factors = np.concatenate([
            apply_noise(self.exact, NoiseModel(0.1), noise_stream(42, 0, t)).as_vector() / exact
            for t in range(16667)
        ])
        self.assertGreaterEqual(factors.size, 100_000)
        self.assertAlmostEqual(float(np.mean(factors)), 1.0, delta=0.002)
        self.assertAlmostEqual(float(np.std(factors)), 0.1, delta=0.003)

    def test_no_clamping(self):
        negative = sum(
            int(np.any(apply_noise(self.exact, NoiseModel(1.0), noise_stream(2, 0, t)).as_vector() < 0))
            for t in range(50)
        )
        self.assertGreater(negative, 0)

    def test_refuses_noisy_input(self):
        noisy = apply_noise(self.exact, NoiseModel(0.1), RngStream(1))
        with self.assertRaises(DomainError):
            apply_noise(noisy, NoiseModel(0.1), RngStream(1))


class TestSampleScene(unittest.TestCase):
    def test_deterministic(self):
        self.assertEqual(sample_scene(scene_stream(5, 2)), sample_scene(scene_stream(5, 2)))

    def test_bounds(self):
        for k in range(300):
            scene = sample_scene(scene_stream(17, k), alpha_min=0.05)
            self.assertGreater(scene.alpha, 0.05)
            self.assertLessEqual(scene.alpha, 1.0)
            self.assertEqual(scene.emitter1.peak_brightness, 1.0)
            self.assertLessEqual(math.hypot(*scene.emitter1.position), 1.0)
            self.assertLessEqual(math.hypot(*scene.emitter2.position), 1.0)

    def test_alpha_max_narrows_band(self):
        for k in range(50):
            scene = sample_scene(scene_stream(1, k), alpha_min=0.0, alpha_max=0.5)
            self.assertGreater(scene.alpha, 0.0)
            self.assertLessEqual(scene.alpha, 0.5)

    def test_positions_are_area_uniform(self):
        gen = np.random.Generator(np.random.Philox(7))
        radii = np.array([math.hypot(*uniform_disk(gen)) for _ in range(4000)])
        # area-uniform: P(r <= 0.5) = 0.25
        self.assertAlmostEqual(float(np.mean(radii <= 0.5)), 0.25, delta=0.03)

    def test_mean_emitter_radius_is_two_thirds(self):
        radii = []
        for k in range(5000):
            scene = sample_scene(scene_stream(23, k))
            radii.append(math.hypot(*scene.emitter1.position))
            radii.append(math.hypot(*scene.emitter2.position))
        self.assertAlmostEqual(float(np.mean(radii)), 2.0 / 3.0, delta=0.01)

    def test_rejects_bad_band(self):
        with self.assertRaises(DomainError):
            sample_scene(scene_stream(0, 0), alpha_min=1.0)
        with self.assertRaises(DomainError):
            sample_scene(scene_stream(0, 0), alpha_min=0.5, alpha_max=0.4)


class TestDefaultLayout(unittest.TestCase):
    def test_positions(self):
        layout = default_layout()
        self.assertEqual(layout.positions[0], (0.0, 1.0))
        self.assertAlmostEqual(layout.positions[1][0], math.sqrt(2.0))
        self.assertEqual(layout.positions[2][1], -0.5)
        self.assertGreater(layout.triangle_area(), 1.0)


if __name__ == "__main__":
    unittest.main()

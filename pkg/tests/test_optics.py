import math
import unittest

import numpy as np

from quantum_trilateration.exceptions import DomainError
from quantum_trilateration.optics import (
    canonicalize_scene,
    confocal_map,
    correlation_contours,
    detection_probability,
    detector_probabilities,
    forward_model,
    g2_n_colocated,
    g2_two_emitter,
    local_maxima,
    sigma_from_optics,
)
from quantum_trilateration.scene import Emitter, MapGrid, MeasurementSet, PsfModel, Scene
from quantum_trilateration.synth import default_layout
from tests.oracles import REF_ALPHA, REF_X1, REF_X2, REF_Y1, REF_Y2, reference_sextuple


class TestG2TwoEmitter(unittest.TestCase):
    def test_equal_brightness_gives_half(self):
        self.assertEqual(g2_two_emitter(1.0), 0.5)

    def test_dark_partner_gives_zero(self):
        self.assertEqual(g2_two_emitter(0.0), 0.0)

    def test_half_brightness(self):
        self.assertAlmostEqual(g2_two_emitter(0.5), 4.0 / 9.0, places=15)

    def test_symmetric_under_inversion(self):
        for a in np.logspace(-4, 4, 161):
            self.assertAlmostEqual(g2_two_emitter(a) / g2_two_emitter(1.0 / a), 1.0, delta=1e-12)
        for a in (1e5, 1e6):
            self.assertAlmostEqual(g2_two_emitter(a) / g2_two_emitter(1.0 / a), 1.0, delta=1e-12)

    def test_maximum_only_at_one(self):
        for a in np.linspace(0.0, 3.0, 301):
            if abs(a - 1.0) > 1e-9:
                self.assertLess(g2_two_emitter(a), 0.5)

    def test_rejects_negative_and_non_finite(self):
        for bad in (-0.1, math.nan, math.inf):
            with self.assertRaises(DomainError):
                g2_two_emitter(bad)


class TestG2Colocated(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(g2_n_colocated(1), 0.0)
        self.assertEqual(g2_n_colocated(2), 0.5)
        self.assertAlmostEqual(g2_n_colocated(100), 0.99, places=15)

    def test_matches_closed_form(self):
        for n in list(range(1, 1000)) + [10 ** 5, 10 ** 6]:
            self.assertEqual(g2_n_colocated(n), 1.0 - 1.0 / n)

    def test_two_colocated_agrees_with_equal_brightness_pair(self):
        self.assertEqual(g2_n_colocated(2), g2_two_emitter(1.0))

    def test_rejects_zero_and_fractions(self):
        for bad in (0, -3, 2.5, True):
            with self.assertRaises(DomainError):
                g2_n_colocated(bad)


class TestDetectionProbability(unittest.TestCase):
    def setUp(self):
        self.psf = PsfModel(1.0)

    def test_peak_value(self):
        p = detection_probability(Emitter(0.0, 0.0, 1.0), (0.0, 0.0), self.psf)
        self.assertAlmostEqual(p, 0.3989422804014327, places=15)

    def test_one_sigma_away(self):
        p = detection_probability(Emitter(1.0, 0.0, 1.0), (0.0, 0.0), self.psf)
        self.assertAlmostEqual(p, math.exp(-0.5) / math.sqrt(2 * math.pi), places=15)
        self.assertAlmostEqual(p, 0.241971, places=6)

    def test_dark_emitter(self):
        self.assertEqual(detection_probability(Emitter(0.3, -2.0, 0.0), (1.0, 1.0), PsfModel(0.4)), 0.0)

    def test_gaussian_ratio_and_monotonic_decay(self):
        psf = PsfModel(0.7)
        centre = detection_probability(Emitter(0.0, 0.0, 2.0), (0.0, 0.0), psf)
        previous = centre
        for r in np.linspace(0.05, 3.0, 60):
            p = detection_probability(Emitter(r * 0.6, r * 0.8, 2.0), (0.0, 0.0), psf)
            self.assertAlmostEqual(p / centre, math.exp(-r * r / (2 * 0.49)), delta=1e-12)
            self.assertLess(p, previous)
            previous = p

    def test_psf_rejects_non_positive_sigma(self):
        for bad in (0.0, -1.0, math.nan):
            with self.assertRaises(DomainError):
                PsfModel(bad)


class TestForwardModel(unittest.TestCase):
    def setUp(self):
        self.layout = default_layout()
        self.psf = PsfModel(1.0)

    def test_colocated_at_detector(self):
        scene = Scene.from_params(0.0, 1.0, 0.0, 1.0, 1.0)
        m = forward_model(scene, self.layout, self.psf)
        self.assertEqual(m.g2[0], 0.5)
        self.assertFalse(m.noisy)

    def test_partner_one_sigma_away(self):
        scene = Scene.from_params(0.0, 1.0, 1.0, 1.0, 1.0)
        m = forward_model(scene, self.layout, self.psf)
        a = math.exp(-0.5)
        self.assertAlmostEqual(m.g2[0], 2 * a / (1 + a) ** 2, places=14)
        self.assertAlmostEqual(m.g2[0], 0.4700, places=4)

    def test_reference_scene_regression(self):
        scene = Scene.from_params(REF_X1, REF_Y1, REF_X2, REF_Y2, REF_ALPHA)
        m = forward_model(scene, self.layout, self.psf)
        np.testing.assert_allclose(m.as_vector(), reference_sextuple(), rtol=1e-12, atol=0)

    def test_label_swap_invariance(self):
        scene = Scene(Emitter(0.2, -0.4, 1.3), Emitter(-0.5, 0.1, 0.65), alpha=0.5)
        swapped = Scene(scene.emitter2, scene.emitter1, alpha=2.0)
        a = forward_model(scene, self.layout, self.psf)
        b = forward_model(swapped, self.layout, self.psf)
        np.testing.assert_allclose(a.as_vector(), b.as_vector(), rtol=1e-13)

    def test_brightness_rescaling(self):
        scene = Scene.from_params(0.1, 0.2, -0.3, -0.6, 0.4)
        base = forward_model(scene, self.layout, self.psf)
        for c in (0.01, 3.0, 250.0):
            scaled = forward_model(Scene.from_params(0.1, 0.2, -0.3, -0.6, 0.4, peak1=c), self.layout, self.psf)
            np.testing.assert_allclose(scaled.g2, base.g2, rtol=1e-12)
            np.testing.assert_allclose(scaled.g1, np.array(base.g1) * c, rtol=1e-12)

    def test_g2_matches_effective_ratio(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            x1, y1, x2, y2 = rng.uniform(-1, 1, 4)
            alpha = rng.uniform(0.01, 1.0)
            scene = Scene.from_params(x1, y1, x2, y2, alpha)
            p1, p2 = detector_probabilities(scene, self.layout, self.psf)
            m = forward_model(scene, self.layout, self.psf)
            for j in range(3):
                self.assertAlmostEqual(m.g2[j], g2_two_emitter(p2[j] / p1[j]), delta=1e-12)
                self.assertAlmostEqual(m.g1[j], p1[j] + p2[j], delta=1e-15)
                self.assertLessEqual(m.g2[j], 0.5)

    def test_dark_scene_has_zero_g2(self):
        scene = Scene(Emitter(0.0, 0.0, 0.0), Emitter(0.5, 0.5, 0.0), alpha=0.0)
        m = forward_model(scene, self.layout, self.psf)
        self.assertEqual(m.g1, (0.0, 0.0, 0.0))
        self.assertEqual(m.g2, (0.0, 0.0, 0.0))

    def test_probabilities_are_recorded(self):
        m = forward_model(Scene.from_params(0.0, 0.0, 0.3, 0.3, 0.5), self.layout, self.psf)
        self.assertEqual(len(m.p1), 3)
        self.assertEqual(len(m.p2), 3)

    def test_exact_set_bounds(self):
        with self.assertRaises(DomainError):
            MeasurementSet(g1=(1.0, 1.0, 1.0), g2=(0.6, 0.1, 0.1))
        MeasurementSet(g1=(1.0, 1.0, 1.0), g2=(0.6, -0.1, 0.1), noisy=True)

    def test_inconsistent_alpha_rejected(self):
        with self.assertRaises(DomainError):
            Scene(Emitter(0, 0, 1.0), Emitter(1, 1, 0.5), alpha=0.7)


class TestCanonicalizeScene(unittest.TestCase):
    def test_swaps_dimmer_first_emitter(self):
        scene = Scene(Emitter(1.0, 0.0, 0.5), Emitter(-1.0, 0.0, 1.0), alpha=2.0)
        canonical = canonicalize_scene(scene)
        self.assertAlmostEqual(canonical.alpha, 0.5)
        self.assertEqual(canonical.emitter1.position, (-1.0, 0.0))
        self.assertTrue(canonical.is_canonical)

    def test_canonical_scene_unchanged(self):
        scene = Scene.from_params(0.1, 0.2, 0.3, 0.4, 0.3)
        self.assertIs(canonicalize_scene(scene), scene)

    def test_brighter_emitter_is_rescaled_to_unit_peak(self):
        swapped = Scene.from_params(0.5146, -0.5573, -0.63, -0.1276, 1.0 / 0.3617)
        scaled = Scene.from_params(-0.63, -0.1276, 0.5146, -0.5573, 0.3617, peak1=3.0)
        for scene in (swapped, scaled):
            with self.subTest(peak1=scene.emitter1.peak_brightness, alpha=scene.alpha):
                canonical = canonicalize_scene(scene)
                self.assertEqual(canonical.emitter1.peak_brightness, 1.0)
                self.assertAlmostEqual(canonical.emitter2.peak_brightness, 0.3617, places=12)
                self.assertAlmostEqual(canonical.alpha, 0.3617, places=12)
                self.assertEqual(canonical.emitter1.position, (-0.63, -0.1276))
                self.assertEqual(canonical.emitter2.position, (0.5146, -0.5573))

    def test_dark_scene_unchanged(self):
        scene = Scene(Emitter(0.0, 0.0, 0.0), Emitter(1.0, 0.0, 0.0), alpha=0.0)
        self.assertIs(canonicalize_scene(scene), scene)

    def test_dark_first_emitter_is_swapped(self):
        scene = Scene(Emitter(0.0, 0.0, 0.0), Emitter(1.0, 0.0, 2.0), alpha=0.5)
        canonical = canonicalize_scene(scene)
        self.assertEqual(canonical.emitter1.position, (1.0, 0.0))
        self.assertEqual(canonical.emitter1.peak_brightness, 1.0)
        self.assertEqual(canonical.alpha, 0.0)


class TestSigmaFromOptics(unittest.TestCase):
    def test_examples(self):
        self.assertAlmostEqual(sigma_from_optics(1.0, 0.21), 1.0, places=15)
        self.assertAlmostEqual(sigma_from_optics(532.0, 1.3), 85.94, places=2)
        self.assertAlmostEqual(sigma_from_optics(637.0, 0.9), 148.6, places=1)

    def test_rejects_non_positive(self):
        for args in ((0.0, 1.0), (500.0, 0.0), (-1.0, 1.0), (500.0, -0.5)):
            with self.assertRaises(DomainError):
                sigma_from_optics(*args)


class TestConfocalMap(unittest.TestCase):
    def setUp(self):
        self.psf = PsfModel(1.0)

    def test_colocated_equal_emitters_peak_at_two(self):
        cmap = confocal_map(Scene.from_params(0.0, 0.0, 0.0, 0.0, 1.0), self.psf)
        x, y, value = cmap.peak()
        self.assertAlmostEqual(value, 2.0, places=9)
        self.assertAlmostEqual(x, 0.0, places=9)
        self.assertAlmostEqual(y, 0.0, places=9)

    def test_dark_partner_gives_single_gaussian(self):
        scene = Scene.from_params(0.3, -0.2, -0.5, 0.5, 0.0)
        cmap = confocal_map(scene, self.psf, MapGrid(pitch=0.1))
        gx, gy = np.meshgrid(cmap.x, cmap.y)
        expected = np.exp(-((gx - 0.3) ** 2 + (gy + 0.2) ** 2) / 2.0)
        np.testing.assert_allclose(cmap.values, expected, rtol=1e-12)
        self.assertAlmostEqual(cmap.peak()[2], 1.0, places=9)

    def test_default_grid_shape(self):
        cmap = confocal_map(Scene.from_params(0.0, 0.0, 0.5, 0.5, 0.5), self.psf)
        self.assertEqual(cmap.values.shape, (81, 81))
        self.assertAlmostEqual(cmap.pitch, 0.05, places=12)
        self.assertTrue(np.all(cmap.values >= 0))

    def test_reference_scene_is_unresolved(self):
        scene = Scene.from_params(REF_X1, REF_Y1, REF_X2, REF_Y2, REF_ALPHA)
        cmap = confocal_map(scene, self.psf, MapGrid(pitch=0.05))
        peaks = local_maxima(cmap, 0.1)
        self.assertEqual(len(peaks), 1)
        self.assertLessEqual(cmap.values.max(), 1.0 + REF_ALPHA)

    def test_well_separated_emitters_are_resolved(self):
        scene = Scene.from_params(-1.5, 0.0, 1.5, 0.0, 1.0)
        cmap = confocal_map(scene, self.psf, MapGrid(-3, 3, -1, 1, 0.05))
        self.assertEqual(len(local_maxima(cmap, 0.1)), 2)


class TestCorrelationContours(unittest.TestCase):
    def test_origin_values(self):
        contours = correlation_contours(1.0, PsfModel(1.0), r_max=2.0, pitch=0.1)
        self.assertEqual(contours.g1.shape, (21, 21))
        self.assertAlmostEqual(contours.g2[0, 0], 0.5, places=15)
        self.assertAlmostEqual(contours.g1[0, 0], 2.0 / math.sqrt(2 * math.pi), places=15)

    def test_equal_brightness_is_symmetric(self):
        contours = correlation_contours(1.0, PsfModel(1.0), r_max=1.5, pitch=0.05)
        np.testing.assert_allclose(contours.g2, contours.g2.T, atol=1e-15)

    def test_unequal_brightness_breaks_symmetry(self):
        contours = correlation_contours(0.5, PsfModel(1.0), r_max=1.5, pitch=0.05)
        self.assertFalse(np.allclose(contours.g1, contours.g1.T))


if __name__ == "__main__":
    unittest.main()

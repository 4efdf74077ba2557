import math
import unittest

from semiclassic_lab.utils.fits import is_nonincreasing, order_fit, rate_fit
from semiclassic_lab.utils.hashing import config_hash


class TestFits(unittest.TestCase):

    def test_order_of_a_power_law(self):
        scales = [0.4, 0.2, 0.1, 0.05]
        self.assertAlmostEqual(order_fit(scales, [3.0 * s ** 2 for s in scales]), 2.0, places=10)
        fit = rate_fit(scales, [3.0 * s ** 0.5 for s in scales])
        self.assertAlmostEqual(fit["order"], 0.5, places=10)
        self.assertAlmostEqual(fit["prefactor"], 3.0, places=10)
        self.assertLess(fit["misfit"], 1e-10)

    def test_unusable_points_are_dropped(self):
        """
        Zero and non-finite values carry no slope information.
        """
        self.assertTrue(math.isnan(order_fit([0.1, 0.05], [0.0, 1.0])))
        self.assertTrue(math.isnan(rate_fit([0.1], [1.0])["order"]))
        self.assertAlmostEqual(order_fit([0.4, 0.2, 0.1], [0.16, float("nan"), 0.01]), 2.0, places=10)

    def test_is_nonincreasing(self):
        self.assertTrue(is_nonincreasing([3.0, 2.0, 2.0, 1.0]))
        self.assertFalse(is_nonincreasing([3.0, 2.0, 2.1]))
        self.assertTrue(is_nonincreasing([3.0, 2.0, 2.1], tolerance=0.2))
        self.assertTrue(is_nonincreasing([]))


class TestHashing(unittest.TestCase):

    def test_config_hash_ignores_key_order(self):
        first = config_hash({"grid": {"points": 128, "dim": 1}, "seed": 3})
        second = config_hash({"seed": 3, "grid": {"dim": 1, "points": 128}})
        self.assertEqual(first, second)
        self.assertEqual(len(first), 64)
        self.assertNotEqual(first, config_hash({"seed": 4, "grid": {"dim": 1, "points": 128}}))


if __name__ == "__main__":
    unittest.main()

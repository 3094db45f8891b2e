"""一次元探索ルーチンのテスト"""

import numpy as np
import pytest

from nullspread.optimize import bisect_decreasing, golden_section_minimize


def test_golden_quadratic():
    result = golden_section_minimize(lambda x: (x - 1.3) ** 2, 0.0, 5.0, tol=1e-10)
    assert result.converged
    assert float(result.argmin) == pytest.approx(1.3, abs=1e-8)


def test_golden_vectorized():
    centers = np.array([-2.0, 0.5, 3.0])
    result = golden_section_minimize(lambda x: (x - centers) ** 2, -5.0, 5.0, tol=1e-10)
    np.testing.assert_allclose(result.argmin, centers, atol=1e-8)


def test_golden_boundary_minimum():
    result = golden_section_minimize(lambda x: x, 0.0, 1.0, tol=1e-6)
    assert float(result.argmin) == 0.0
    assert float(result.minimum) == 0.0


def test_bisect_decreasing():
    root = bisect_decreasing(lambda x: 2.0 - x * x, 0.0, 2.0, tol=1e-13)
    assert float(root) == pytest.approx(np.sqrt(2.0), abs=1e-12)

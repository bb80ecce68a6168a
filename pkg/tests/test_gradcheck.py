import numpy as np
import pytest

from acnn import gradcheck


@pytest.mark.parametrize("name", list(gradcheck.CHECKS))
def test_check_passes_at_generic_points(name):
    err = gradcheck.run_all(seed=1, points=2, names={name})[name]
    assert err < gradcheck.THRESHOLD


def test_rel_error_detects_wrong_gradient():
    g = np.array([1.0, 2.0, 3.0])
    assert gradcheck.rel_error(g, g) == 0.0
    assert gradcheck.rel_error(g, g * 1.01) > gradcheck.THRESHOLD

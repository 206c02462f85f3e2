import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from semidet.simworld import WorldConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def small_world(**kw):
    base = dict(grid_w=8, grid_h=8, feature_dim=16, class_count=2, min_box_size=2.0, max_box_size=5.0,
                n_scenes=24, n_test=8, label_fraction=0.5)
    base.update(kw)
    return WorldConfig(**base)


@pytest.fixture
def world():
    return small_world()


FD_STEP = 1e-5


def numeric_grad(f, x, h=FD_STEP, coords=None):
    """Central differences of scalar ``f`` at flat ``x`` (optionally only at ``coords``)."""
    x = np.array(x, dtype=np.float64)
    coords = range(x.size) if coords is None else coords
    out = []
    for i in coords:
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out.append((f(xp) - f(xm)) / (2 * h))
    return np.array(out)


def rel_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])

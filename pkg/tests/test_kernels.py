import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmot import _kernels
from mmot.duality import multisets

BACKENDS = [pytest.param(_kernels.python_kernels, id="python")]
if _kernels.compiled_kernels is not None:
    BACKENDS.append(pytest.param(_kernels.compiled_kernels, id="cython"))

needs_compiled = pytest.mark.skipif(_kernels.compiled_kernels is None, reason="compiled kernels not built")


def reference_tuple_min(dxy, idx, inner):
    totals = np.array([[sum(dxy[p, j] for j in row) + inner[t] for t, row in enumerate(idx)]
                       for p in range(dxy.shape[0])])
    return totals.min(axis=1)


def reference_window(x, w, width):
    return max(w[(x >= xi) & (x < xi + width)].sum() for xi in x)


@pytest.mark.parametrize("k", BACKENDS)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_tuple_min_reference(k, seed, width):
    rng = np.random.default_rng(seed)
    dxy = rng.random((7, 5))
    idx = multisets(5, width)
    inner = rng.normal(size=len(idx))
    values, arg = k.tuple_min(dxy, idx, inner)
    assert np.allclose(values, reference_tuple_min(dxy, idx, inner), atol=1e-12)
    assert np.array_equal(values, dxy[np.arange(7)[:, None], idx[arg]].sum(axis=1) + inner[arg])


@pytest.mark.parametrize("k", BACKENDS)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.8))
def test_window_reference(k, seed, width):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.random(12))
    w = rng.random(12)
    mass, start = k.window_mass_1d(x, w, width)
    assert mass == pytest.approx(reference_window(x, w, width), abs=1e-12)
    assert 0 <= start < 12


@needs_compiled
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_backends_bit_identical(seed, width):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 9))
    dxy = rng.random((25, m))
    dxy[rng.random(dxy.shape) < 0.2] = 1.0  # force ties
    idx = multisets(m, width)
    inner = np.round(rng.normal(size=len(idx)), 1)
    vp, ap = _kernels.python_kernels.tuple_min(dxy, idx, inner)
    vc, ac = _kernels.compiled_kernels.tuple_min(dxy, idx, inner)
    assert np.array_equal(vp, vc)
    assert np.array_equal(ap, ac)
    x = np.sort(np.round(rng.random(30), 2))
    w = rng.random(30)
    assert _kernels.python_kernels.window_mass_1d(x, w, 0.1) == _kernels.compiled_kernels.window_mass_1d(x, w, 0.1)


def test_env_forces_fallback():
    env = dict(os.environ, MMOT_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", "from mmot import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_pipeline_identical_across_backends():
    code = (
        "from mmot.analysis.campaign import run_campaign; from mmot.jsonio import dumps;"
        "print(dumps(run_campaign(3, 4, n_probes=200)))"
    )
    outs = []
    for backend in ("python", "cython"):
        env = dict(os.environ, MMOT_KERNELS=backend, MMOT_WORKERS="1")
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                                   check=True).stdout)
    assert outs[0] == outs[1]

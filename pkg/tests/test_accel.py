import os
import subprocess
import sys

import numpy as np

from promptfed import model
from promptfed.datasets import synth_task


def _backend(env_value):
    env = dict(os.environ)
    env.pop("PROMPTFED_DISABLE_NUMBA", None)
    if env_value is not None:
        env["PROMPTFED_DISABLE_NUMBA"] = env_value
    out = subprocess.run([sys.executable, "-c", "from promptfed._accel import backend; print(backend())"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_flag_selects_numpy():
    assert _backend("1") == "numpy"


def test_default_backend_is_numba_when_installed():
    try:
        import numba  # noqa: F401
    except ImportError:
        assert _backend(None) == "numpy"
    else:
        assert _backend(None) == "numba"


def test_large_batches_use_the_same_math(small_backbone):
    d = synth_task(0, 3, 5, 200)
    p = np.full((4, 3), 0.1)
    auto = model.run_batch(small_backbone, p, d.X, d.y)
    slow = model.run_batch(small_backbone, p, d.X, d.y, use_numba=False)
    for a, b in zip(auto, slow):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

import numpy as np
import pytest

from hesit import _backend, _kernels_py
from hesit.model import ModelSpec

needs_ext = pytest.mark.skipif("cython" not in _backend.available(), reason="extension not built")


@needs_ext
@pytest.mark.parametrize("hidden,act", [((), "identity"), ((5,), "relu"), ((4, 3), "tanh")])
def test_compiled_matches_numpy(hidden, act):
    from hesit import _kernels
    spec = ModelSpec(4, 3, hidden, act)
    rng = np.random.default_rng(0)
    p = rng.normal(size=spec.n_params)
    X, y = rng.normal(size=(7, 4)), rng.integers(3, size=7)
    args = (p, spec.sizes, spec._code(), X, y)
    l1, g1 = _kernels.example_grads(*args)
    l2, g2 = _kernels_py.example_grads(*args)
    np.testing.assert_allclose(l1, l2, rtol=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(_kernels.example_losses(*args), l2, rtol=1e-12)
    np.testing.assert_allclose(_kernels.logits(p, spec.sizes, spec._code(), X),
                               _kernels_py.logits(p, spec.sizes, spec._code(), X), rtol=1e-12)


def test_backend_switch(backend):
    assert _backend.name == backend
    spec = ModelSpec(2, 2)
    losses, G = spec.example_grads(np.zeros(6), np.ones((2, 2)), np.array([0, 1]))
    np.testing.assert_allclose(losses, np.log(2))
    assert G.shape == (2, 6)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.use("fortran")


def test_env_var_forces_fallback():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "from hesit import _backend; print(_backend.name)"],
                         capture_output=True, text=True, env={"HESIT_PURE_PYTHON": "1", "PATH": ""})
    assert out.stdout.strip() == "python"

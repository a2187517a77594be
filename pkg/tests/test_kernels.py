import importlib.util
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from lpkam import _kernels
from lpkam.psalg import Ring

from conftest import random_series

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba backend unavailable")


def _args(s):
    d = s.degs
    return s.codes, s.vals, d[0], d[1]


@needs_numba
def test_mul_backends_agree(rng):
    ring = Ring(3, 2, 10, 4, (0.1 + 0j, -0.2j))
    for _ in range(20):
        a, b = random_series(ring, rng, 30), random_series(ring, rng, 30)
        lim = (ring.xmax, ring.umax)
        c1, v1 = _kernels.mul_numpy(*_args(a), *_args(b), *lim)
        c2, v2 = _kernels._mul_nb(*_args(a), *_args(b), *lim, 1 << 30)
        assert np.array_equal(c1, c2)
        assert np.abs(v1 - v2).max(initial=0.0) <= 1e-14 * max(np.abs(v1).max(initial=0.0), 1.0)


@needs_numba
def test_eval_backends_agree(rng):
    ring = Ring(3, 1, 8, 3, (0j,))
    s = random_series(ring, rng, 40)
    pts = rng.standard_normal((50, 4)) * 0.4 + 1j * rng.standard_normal((50, 4)) * 0.4
    e, v = s.exps(), s.vals
    assert np.allclose(_kernels.eval_numpy(e, v, pts), _kernels._eval_nb(e, v, pts), rtol=1e-13, atol=1e-15)


def test_empty_operands():
    empty = (np.empty(0, np.int64), np.empty(0, np.complex128), np.empty(0, np.int64), np.empty(0, np.int64))
    c, v = _kernels.mul(*empty, *empty, 4, 2, 100)
    assert c.size == 0 and v.size == 0


SCRIPT = """
import json
from lpkam import _kernels
from lpkam.verify import scenario_hamiltonian
from lpkam.normalform import normalize
st = normalize(scenario_hamiltonian(1, base=(0.01,)).initial_state(), 16)
print(json.dumps({"backend": _kernels.BACKEND,
                  "a": [[v.real, v.imag] for v in st.a[0].vals],
                  "rem": st.remainder.max_abs()}))
"""


def _run(disable):
    env = dict(os.environ, LPKAM_DISABLE_NUMBA=disable)
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_environment_switch_and_end_to_end_agreement():
    slow = _run("1")
    assert slow["backend"] == "numpy"
    fast = _run("0")
    assert fast["backend"] == ("numba" if importlib.util.find_spec("numba") else "numpy")
    a1, a2 = np.array(slow["a"]), np.array(fast["a"])
    assert a1.shape == a2.shape
    assert np.abs(a1 - a2).max() <= 1e-13
    assert fast["rem"] == pytest.approx(slow["rem"], rel=1e-10)

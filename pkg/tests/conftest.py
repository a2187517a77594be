import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lpkam.psalg import Ring
from lpkam.resonance import LinearMorphism, ResonantStructure

settings.register_profile(
    "lpkam",
    deadline=None,
    derandomize=True,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("lpkam")


def random_series(ring, rng, nterms=8, *, min_deg=0, max_deg=None, scale=1.0, udeg=None):
    """Sparse random series with x-degree in [min_deg, max_deg]."""
    max_deg = ring.xmax if max_deg is None else max_deg
    udeg = ring.umax if udeg is None else udeg
    terms = {}
    for _ in range(nterms):
        d = int(rng.integers(min_deg, max_deg + 1))
        q = tuple(int(v) for v in rng.multinomial(d, [1.0 / ring.n] * ring.n)) if ring.n else ()
        pu = int(rng.integers(0, udeg + 1)) if ring.p else 0
        p = tuple(int(v) for v in rng.multinomial(pu, [1.0 / ring.p] * ring.p)) if ring.p else ()
        terms[(q, p)] = scale * complex(rng.standard_normal(), rng.standard_normal())
    return ring.from_terms(terms)


def random_field(ring, rng, nterms=6, **kw):
    from lpkam.psalg import VectorField

    return VectorField([random_series(ring, rng, nterms, **kw) for _ in range(ring.n)])


# small resonant configurations (eigenvalue rows, resonant rows), 0-based
CONFIGS = {
    "pair": ([[1, -1]], [[1, 1]]),
    "chain3": ([[1, -1, 0], [0, 1, -1]], [[1, 1, 1]]),
    "weighted3": ([[1, -1, 2]], [[1, 1, 0], [0, 2, 1]]),
    "one_two": ([[1, -2]], [[2, 1]]),
    "pair_plus": ([[1, -1, 0]], [[1, 1, 0], [0, 0, 1]]),
}


def config(name):
    lam, R = CONFIGS[name]
    S = LinearMorphism(lam)
    return S, ResonantStructure(R, S)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pair_ring():
    return Ring(2, 1, 8, 3, (0j,))

import numpy as np
import pytest

from conftest import random_potential
from src.dyson_engine import (
    DysonConfig,
    DysonTailError,
    dyson_amplitude,
    dyson_tail,
    dyson_term_support,
    dyson_terms,
)
from src.operator_model import make_potential, truncate, zero_potential
from src.spectral_engine import eigendecompose, fourier

ORDER_CAP = 25


def _cases(count=20, seed=2024):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        box = int(rng.integers(2, 11))
        V = random_potential(rng, box)
        lam = float(rng.uniform(-2.0, 2.0))
        t = float(rng.uniform(-1.0, 1.0))
        yield V, lam, t, box


def test_tail_is_small_at_default_order():
    assert dyson_tail(ORDER_CAP, 2.0, 1.0) <= 1e-6


@pytest.mark.parametrize("case", list(_cases()), ids=lambda c: f"box{c[3]}-t{c[2]:.3f}")
def test_agrees_with_spectral_evolution(case):
    V, lam, t, box = case
    cfg = DysonConfig(order_cap=ORDER_CAP, quad_points=33, t=t, lam=lam)
    result = dyson_amplitude(V, cfg, box)
    exact = fourier(eigendecompose(truncate(V, lam, box)), t)
    assert result.tail_bound <= 1e-6
    assert abs(result.value - exact) <= result.tail_bound + 10.0 * result.quad_tolerance + 1e-12
    assert len(result.terms) == ORDER_CAP + 1


@pytest.mark.parametrize("m", range(7))
def test_order_m_ignores_sites_past_m_plus_one(m):
    site = m + 2
    for V, lam, t, _ in _cases(seed=99):
        box = 10
        bumped = dict(V.barriers)
        bumped[site] = float(bumped.get(site, 0.0)) + 1.5
        W = make_potential(sorted(bumped.items()))
        cfg = DysonConfig(order_cap=ORDER_CAP, quad_points=257, t=t or 0.5, lam=lam)
        base = dyson_terms(V, cfg, box, cfg.quad_points)
        moved = dyson_terms(W, cfg, box, cfg.quad_points)
        np.testing.assert_array_equal(base[: m + 1], moved[: m + 1])
        assert not np.array_equal(base, moved)
        assert dyson_term_support(m) == m + 1


def test_zero_time_is_one():
    cfg = DysonConfig(order_cap=5, quad_points=9, t=0.0, lam=1.0)
    result = dyson_amplitude(make_potential([(2, 3.0)]), cfg, 4)
    assert result.value == 1.0
    assert result.terms[1:] == (0j,) * 5


def test_free_two_site_block_gives_cosine():
    cfg = DysonConfig(order_cap=ORDER_CAP, quad_points=65, t=0.8, lam=0.0)
    result = dyson_amplitude(zero_potential(), cfg, 2)
    assert result.value == pytest.approx(np.cos(0.8), abs=1e-7)
    assert result.grid_points > 65


def test_rejects_order_cap_with_large_tail():
    cfg = DysonConfig(order_cap=2, quad_points=9, t=1.0, lam=0.0)
    with pytest.raises(DysonTailError) as exc:
        dyson_amplitude(zero_potential(), cfg, 3)
    assert exc.value.tail > exc.value.threshold


def test_config_validation():
    with pytest.raises(ValueError):
        DysonConfig(order_cap=0, quad_points=9, t=1.0, lam=0.0)
    with pytest.raises(ValueError):
        DysonConfig(order_cap=3, quad_points=1, t=1.0, lam=0.0)
    with pytest.raises(ValueError):
        dyson_term_support(-1)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlfp.convolution import ConvPlan, brute_convolve, brute_convolve_2d, periodic_convolve, periodic_convolve_2d
from nlfp.grid import Axis, Field, GridSpec
from nlfp.kernels import TopHat


def coordinate_sum(kernel, grid, u):
    """Riemann sum of kernel(x_i - x_j) u(x_j) with the offset wrapped into the period."""
    ax = grid.axes[0]
    L = ax.length
    m = ax.n - 1
    x = ax.nodes[:m]
    d = x[:, None] - x[None, :]
    d = (d - ax.lower) % L + ax.lower
    out = (kernel(d) * u[None, :m]).sum(axis=1) * ax.spacing
    return np.append(out, out[0])


@pytest.mark.parametrize("n", [33, 129, 257])
def test_fft_matches_direct_sum(n):
    rng = np.random.default_rng(n)
    g = GridSpec.torus(n)
    f = Field(g, g.wrap(rng.standard_normal(n)))
    h = Field(g, g.wrap(rng.standard_normal(n)))
    fast = periodic_convolve(ConvPlan(g), f, h).values
    slow = brute_convolve(f, h).values
    assert np.max(np.abs(fast - slow)) <= 1e-12 * np.max(np.abs(slow))


@pytest.mark.parametrize("n", [33, 129, 257])
def test_kernel_convolution_matches_coordinate_oracle(n):
    rng = np.random.default_rng(1)
    g = GridSpec.torus(n)
    R = np.pi / 7
    kern = TopHat(R)
    plan = ConvPlan(g).set_kernel(kern(g.x))
    u = g.wrap(rng.random(n))
    ref = coordinate_sum(kern, g, u)
    assert np.max(np.abs(plan.convolve_kernel(u) - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_cosine_eigenfunction():
    # W = cos(2x) maps cos(2x) to (pi/2) cos(2x) exactly on the grid
    g = GridSpec.torus(65)
    plan = ConvPlan(g).set_kernel(np.cos(2 * g.x))
    out = plan.convolve_kernel(np.cos(2 * g.x))
    assert np.allclose(out, np.pi / 2 * np.cos(2 * g.x), atol=1e-13)


def test_2d_fft_matches_direct():
    rng = np.random.default_rng(3)
    g = GridSpec.torus2d(17, 13)
    f = Field(g, g.wrap(rng.standard_normal(g.shape)))
    h = Field(g, g.wrap(rng.standard_normal(g.shape)))
    fast = periodic_convolve_2d(ConvPlan(g), f, h).values
    slow = brute_convolve_2d(f, h).values
    assert np.max(np.abs(fast - slow)) <= 1e-12 * np.max(np.abs(slow))


def test_non_centred_period():
    g = GridSpec((Axis(41, 0.0, np.pi, True),))
    rng = np.random.default_rng(5)
    f = Field(g, g.wrap(rng.random(41)))
    h = Field(g, g.wrap(rng.random(41)))
    assert np.allclose(periodic_convolve(ConvPlan(g), f, h).values, brute_convolve(f, h).values, atol=1e-13)


def test_output_periodic_and_plan_checks():
    g = GridSpec.torus(33)
    plan = ConvPlan(g)
    out = periodic_convolve(plan, Field(g, np.ones(33)), Field(g, np.ones(33))).values
    assert out[-1] == out[0]
    assert np.allclose(out, np.pi)
    with pytest.raises(ValueError):
        ConvPlan(GridSpec.interval(33, 0, 1))
    with pytest.raises(ValueError):
        periodic_convolve(plan, Field(GridSpec.torus(35), np.ones(35)), Field(GridSpec.torus(35), np.ones(35)))
    with pytest.raises(RuntimeError):
        plan.convolve_kernel(np.ones(33))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.integers(0, 31))
def test_convolution_commutes_with_shifts(seed, shift):
    rng = np.random.default_rng(seed)
    g = GridSpec.torus(33)
    plan = ConvPlan(g).set_kernel(g.wrap(rng.random(33)))
    u = rng.random(32)
    a = plan.convolve_kernel(np.append(u, u[0]))[:32]
    us = np.roll(u, shift)
    b = plan.convolve_kernel(np.append(us, us[0]))[:32]
    assert np.allclose(np.roll(a, shift), b, atol=1e-12)

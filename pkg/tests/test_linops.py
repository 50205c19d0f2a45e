"""Forward/adjoint operator and weighting tests."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqmri.datagen import simulate_coils
from eqmri.linops import (
    adjoint_op,
    build_weight,
    data_fidelity_grad,
    forward_op,
    identity_weight,
    subsample_weight,
)
from eqmri.sampling import SamplingMask, make_family


def random_mask(rng, w):
    lines = rng.random(w) < 0.5
    lines[rng.integers(w)] = True
    return SamplingMask(lines=lines, acs_range=None)


@settings(max_examples=25, deadline=None)
@given(
    h=st.integers(4, 16),
    w=st.integers(4, 16),
    coils=st.integers(1, 4),
    seed=st.integers(0, 2**31),
)
def test_adjoint_dot_product(h, w, coils, seed):
    rng = np.random.default_rng(seed)
    smaps = simulate_coils(h, w, coils)
    mask = random_mask(rng, w)
    x = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    y = rng.standard_normal((coils, h, w)) + 1j * rng.standard_normal((coils, h, w))
    lhs = np.vdot(y, forward_op(x, smaps, mask))
    rhs = np.vdot(adjoint_op(y, smaps, mask), x)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


@pytest.mark.parametrize("coils", [1, 2, 4])
def test_full_mask_round_trip(coils):
    # sum_c |S_c|^2 == 1 makes A^H A the identity when every line is sampled
    h, w = 12, 16
    rng = np.random.default_rng(coils)
    smaps = simulate_coils(h, w, coils)
    mask = SamplingMask(lines=np.ones(w, dtype=bool), acs_range=None)
    x = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    back = adjoint_op(forward_op(x, smaps, mask), smaps, mask)
    np.testing.assert_allclose(back, x, rtol=0, atol=1e-12 * np.abs(x).max())


def test_forward_zeroes_unsampled_lines():
    h, w = 8, 8
    rng = np.random.default_rng(0)
    smaps = simulate_coils(h, w, 2)
    mask = SamplingMask(lines=np.arange(w) % 4 == 0, acs_range=None)
    y = forward_op(rng.standard_normal((h, w)) + 0j, smaps, mask)
    assert np.all(y[:, :, ~mask.lines] == 0)
    assert np.any(y[:, :, mask.lines] != 0)


def test_data_fidelity_grad_zero_at_consistent_data():
    h, w = 8, 8
    rng = np.random.default_rng(1)
    smaps = simulate_coils(h, w, 3)
    mask = SamplingMask(lines=np.arange(w) % 2 == 0, acs_range=None)
    x = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    y = forward_op(x, smaps, mask)
    g = data_fidelity_grad(x, y, smaps, mask)
    assert np.abs(g).max() <= 1e-13


def test_data_fidelity_grad_matches_fd():
    # g(x) = 0.5 ||M A x - y||^2, directional derivative = Re<grad, d>
    h, w = 8, 8
    rng = np.random.default_rng(2)
    smaps = simulate_coils(h, w, 2)
    mask = random_mask(rng, w)
    x = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    y = rng.standard_normal((2, h, w)) + 1j * rng.standard_normal((2, h, w))
    y = y * mask.lines
    d = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    obj = lambda z: 0.5 * np.sum(np.abs(forward_op(z, smaps, mask) - y) ** 2)
    eps = 1e-6
    fd = (obj(x + eps * d) - obj(x - eps * d)) / (2 * eps)
    analytic = np.real(np.vdot(data_fidelity_grad(x, y, smaps, mask), d))
    assert abs(fd - analytic) <= 1e-6 * max(abs(fd), 1.0)


def test_exact_weight_closed_form():
    # off-ACS lines hit 1/R of the time -> wbar = sqrt(R); ACS always -> 1
    fam = make_family(16, 4, acs=4)
    wbar = build_weight(fam).wbar
    lo = (16 - 4) // 2
    acs = np.zeros(16, dtype=bool)
    acs[lo : lo + 4] = True
    np.testing.assert_allclose(wbar[acs], 1.0, atol=1e-14)
    np.testing.assert_allclose(wbar[~acs], 2.0, atol=1e-14)


def test_exact_weight_zero_on_never_sampled_lines():
    fam = make_family(16, 4, acs=4, variant="deficient")
    freq = fam.line_frequency()
    wbar = build_weight(fam).wbar
    assert np.any(freq == 0)
    assert np.all(wbar[freq == 0] == 0)
    covered = freq > 0
    np.testing.assert_allclose(wbar[covered], 1.0 / np.sqrt(freq[covered]), atol=1e-14)


def test_empirical_weight_approaches_exact():
    fam = make_family(16, 4, acs=4)
    rng = np.random.default_rng(0)
    draws = [fam.members[rng.integers(len(fam.members))] for _ in range(4000)]
    emp = build_weight(fam, mode="empirical", draws=draws).wbar
    exact = build_weight(fam).wbar
    np.testing.assert_allclose(emp, exact, atol=0.15)


def test_subsample_weight_masks_and_squares():
    fam = make_family(8, 2, acs=2)
    wbar = build_weight(fam)
    mask = fam.members[0]
    w2 = subsample_weight(wbar, mask)
    assert w2.shape == (8,)
    assert np.all(w2[~mask.lines] == 0)
    np.testing.assert_allclose(w2[mask.lines], wbar.wbar[mask.lines] ** 2, atol=1e-14)


def test_identity_weight_is_all_ones():
    wv = identity_weight(12)
    np.testing.assert_array_equal(wv.wbar, np.ones(12))


def test_weight_rejects_negative_entries():
    from eqmri.linops import WeightVector

    with pytest.raises(ValueError):
        WeightVector(wbar=np.array([1.0, -0.5]), mode="exact")

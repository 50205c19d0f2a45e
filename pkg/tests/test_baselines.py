"""Zero-filled and TV baseline tests."""

import numpy as np
import pytest

from eqmri.baselines import TvConfig, tv_grid_search, tv_norm, tv_reconstruct, zero_filled
from eqmri.datagen import generate_phantom, make_dataset, simulate_coils
from eqmri.linops import adjoint_op, forward_op
from eqmri.metrics import psnr
from eqmri.sampling import SamplingMask, make_family


def test_zero_filled_is_the_adjoint():
    ds = make_dataset(1, 16, 16, 2, 4, 4, 0.01, 0)
    pair = ds.pair(0)
    smaps = ds.coil_maps()
    np.testing.assert_array_equal(
        zero_filled(pair.y, smaps, pair.mask),
        adjoint_op(pair.y.astype(np.complex128), smaps, pair.mask),
    )


def test_uniform_undersampling_aliases_an_impulse():
    # sampling every 4th k_y line folds a point source into 4 replicas
    # spaced w/4 apart along the line axis
    h = w = 32
    smaps = simulate_coils(h, w, 1)
    mask = make_family(w, 4, acs=0).members[0]
    x = np.zeros((h, w), complex)
    x[16, 5] = 1.0
    rec = np.abs(zero_filled(forward_op(x, smaps, mask), smaps, mask))
    peaks = {(16, (5 + k * 8) % 32) for k in range(4)}
    found = {tuple(idx) for idx in np.argwhere(rec > 0.2)}
    assert found == peaks
    np.testing.assert_allclose(rec[16, 5], 0.25, atol=1e-10)


def test_tv_norm_hand_value():
    # circular forward differences of [[0,1],[0,0]]: |dy| sums to 2, |dx| to 2
    u = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert tv_norm(u) == pytest.approx(4.0, abs=1e-12)
    assert tv_norm(np.full((5, 5), 3.7)) == 0.0


def test_tv_zero_weight_is_least_squares_descent():
    ds = make_dataset(1, 16, 16, 2, 4, 4, 0.0, 3)
    pair = ds.pair(0)
    res = tv_reconstruct(pair.y, ds.coil_maps(), pair.mask, TvConfig(tau=0.0, iters=30))
    assert res.objective.shape == (31,)
    assert res.objective[-1] <= res.objective[0]


def test_tv_objective_is_monotone():
    ds = make_dataset(1, 24, 24, 2, 4, 4, 0.02, 5)
    pair = ds.pair(0)
    res = tv_reconstruct(pair.y, ds.coil_maps(), pair.mask, TvConfig(tau=3e-3, iters=60))
    diffs = np.diff(res.objective)
    assert np.all(diffs <= 1e-8 * max(res.objective[0], 1.0))


def test_tv_beats_zero_filled_on_a_phantom():
    ds = make_dataset(1, 24, 24, 2, 4, 4, 0.01, 7)
    pair = ds.pair(0)
    smaps = ds.coil_maps()
    ref = np.abs(ds.groundtruth(0).astype(np.complex128))
    zf_psnr = psnr(np.abs(zero_filled(pair.y, smaps, pair.mask)), ref)
    res = tv_reconstruct(pair.y, smaps, pair.mask, TvConfig(tau=1e-2, iters=150))
    assert psnr(np.abs(res.x), ref) > zf_psnr + 1.0


def test_large_tau_flattens_the_image():
    h = w = 16
    smaps = simulate_coils(h, w, 1)
    mask = SamplingMask(lines=np.ones(w, dtype=bool), acs_range=None)
    rng = np.random.default_rng(11)
    x = 0.5 + 0.2 * rng.standard_normal((h, w)) + 0j
    res = tv_reconstruct(forward_op(x, smaps, mask), smaps, mask, TvConfig(tau=10.0, iters=40))
    assert np.std(np.abs(res.x)) < 0.25 * np.std(np.abs(x))


def test_tv_rejects_bad_parameters():
    ds = make_dataset(1, 16, 16, 1, 2, 0, 0.0, 0)
    pair = ds.pair(0)
    with pytest.raises(ValueError):
        tv_reconstruct(pair.y, ds.coil_maps(), pair.mask, TvConfig(tau=-1.0))
    with pytest.raises(ValueError):
        tv_reconstruct(pair.y, ds.coil_maps(), pair.mask, TvConfig(step=1.5))


def test_tv_grid_search_picks_the_best_tau():
    ds = make_dataset(3, 16, 16, 2, 4, 4, 0.02, 9)
    smaps = ds.coil_maps()
    ys = [ds.pair(i).y for i in range(3)]
    masks = [ds.pair(i).mask for i in range(3)]
    refs = [np.abs(ds.groundtruth(i).astype(np.complex128)) for i in range(3)]
    taus = [1e-4, 1e-3, 1e-2]
    cfg = TvConfig(iters=40)
    best_tau, best_score = tv_grid_search(ys, masks, smaps, refs, taus, cfg)
    scores = {}
    for tau in taus:
        run = TvConfig(tau=tau, iters=40)
        scores[tau] = np.mean(
            [psnr(np.abs(tv_reconstruct(y, smaps, m, run).x), r) for y, m, r in zip(ys, masks, refs)]
        )
    assert best_tau == max(scores, key=scores.get)
    assert best_score == pytest.approx(scores[best_tau], abs=1e-12)
    with pytest.raises(ValueError):
        tv_grid_search(ys, masks, smaps, refs, [], cfg)

import warnings

import numpy as np
import pytest

from gaitrecon.cvae import CvaeConfig, condition_matrix, train_cvae
from gaitrecon.errors import (AllFramesOccluded, DimensionMismatch, EmptyCorpus, LengthMismatch,
                              SequenceTooShort)
from gaitrecon.evaluation import dice_score
from gaitrecon.occlusion import occlude_sequence
from gaitrecon.pipeline import latent_sequences
from gaitrecon.pose_graph import PoseAssignment
from gaitrecon.silhouette import SyntheticWalkerParams, generate_synthetic_walker
from gaitrecon.temporal_filter import (BilstmConfig, filter_window, interpolate_states, load_bilstm,
                                       make_training_windows, reconstruct, reconstruct_sequence, save_bilstm,
                                       train_bilstm, window_mse)


def _cfg(**kw):
    base = dict(d_z=4, hidden=8, out_hidden=8, epochs=2, lr=1e-2, batch_size=16)
    base.update(kw)
    return BilstmConfig(**base)


def _smooth_latents(n_seq=6, n=40, d=4, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n)[:, None]
    return [np.sin(2 * np.pi * t / 12 + rng.uniform(0, 6, d)) * rng.uniform(0.5, 1.5, d) for _ in range(n_seq)]


def test_window_counts():
    assert make_training_windows([np.zeros((6, 3))]).shape == (1, 6, 3)
    assert make_training_windows([np.zeros((10, 3))]).shape == (5, 6, 3)
    seqs = [np.random.default_rng(0).normal(size=(n, 2)) for n in (7, 12)]
    w = make_training_windows(seqs)
    assert len(w) == 2 + 7
    assert np.array_equal(w[3], seqs[1][1:7].astype(np.float32))


def test_short_sequences_skipped_with_warning():
    with pytest.warns(UserWarning, match="skipped 1"):
        w = make_training_windows([np.zeros((4, 2)), np.zeros((8, 2))])
    assert len(w) == 3
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SequenceTooShort):
            make_training_windows([np.zeros((5, 2))])


def test_window_mse_definition(rng):
    a, b = rng.normal(size=(3, 6, 4)), rng.normal(size=(3, 6, 4))
    assert window_mse(a, b) == pytest.approx(np.mean([np.sum((a[i] - b[i]) ** 2) for i in range(3)]))


def test_filter_contracts():
    model = train_bilstm(make_training_windows(_smooth_latents()), config=_cfg(epochs=1))
    out = filter_window(np.zeros((6, 4)), model)
    assert out.shape == (6, 4) and np.all(np.isfinite(out))
    w = np.random.default_rng(1).normal(size=(5, 6, 4))
    assert np.array_equal(filter_window(w, model), filter_window(w, model))
    assert filter_window(w, model).shape == w.shape
    with pytest.raises(DimensionMismatch):
        filter_window(np.zeros((6, 3)), model)
    with pytest.raises(DimensionMismatch):
        filter_window(np.zeros((5, 4)), model)


def test_empty_windows():
    with pytest.raises(EmptyCorpus):
        train_bilstm(np.zeros((0, 6, 4)), config=_cfg())


def test_overfit_one_window():
    w = make_training_windows(_smooth_latents(1, 6))
    model = train_bilstm(w, (0.3,), _cfg(epochs=200, lr=5e-3))
    assert model.history[-1]["l_mse"] < model.history[0]["l_mse"]


def test_no_masking_learns_identity_like_map():
    train = make_training_windows(_smooth_latents(20, 40, seed=1))
    val = make_training_windows(_smooth_latents(4, 40, seed=2))
    model = train_bilstm(train, (0.0,), _cfg(hidden=16, out_hidden=16, epochs=30, lr=1e-2, batch_size=32))
    shuffled = val[np.random.default_rng(0).permutation(len(val))]
    assert window_mse(filter_window(val, model), val) < window_mse(filter_window(shuffled, model), val)


def test_training_deterministic(tmp_path):
    w = make_training_windows(_smooth_latents())
    a = train_bilstm(w, None, _cfg(epochs=3, seed=4))
    b = train_bilstm(w, None, _cfg(epochs=3, seed=4))
    assert a.history == b.history
    assert save_bilstm(a, tmp_path / "a").read_bytes() == save_bilstm(b, tmp_path / "b").read_bytes()
    back = load_bilstm(tmp_path / "a")
    assert np.array_equal(filter_window(w[:3], back), filter_window(w[:3], a))


def test_frozen_masks_differ_from_resampled():
    w = make_training_windows(_smooth_latents())
    a = train_bilstm(w, None, _cfg(epochs=3, freeze_masks=True))
    b = train_bilstm(w, None, _cfg(epochs=3, freeze_masks=False))
    assert a.history[0] == b.history[0]
    assert a.history[-1] != b.history[-1]


# -- key-pose interpolation ------------------------------------------------------

def _pa(states, k=8):
    return PoseAssignment(np.array(states), 0.0, k)


def test_interpolation_fills_interior_gap():
    o = 9
    assert interpolate_states(_pa([1, 2, o, 4, 5])).tolist() == [1, 2, 3, 4, 5]
    assert interpolate_states(_pa([7, 8, o, 2, 3])).tolist() == [7, 8, 1, 2, 3]
    assert interpolate_states(_pa([3, 3, o, o, 3, 3])).tolist() == [3] * 6


def test_interpolation_extrapolates_edges():
    o = 9
    out = interpolate_states(_pa([o, o, 3, 4, 5, 6, o]))
    assert out.tolist() == [1, 2, 3, 4, 5, 6, 7]


def test_interpolation_needs_an_anchor():
    with pytest.raises(AllFramesOccluded):
        interpolate_states(_pa([9, 9, 9]))


# -- reconstruction contracts with small untrained models ----------------------

@pytest.fixture(scope="module")
def tiny_models():
    seq = generate_synthetic_walker(SyntheticWalkerParams(), 12, seed=0)
    frames = seq.stack()
    conds = condition_matrix((np.arange(12) % 4) + 1, 4)
    cvae = train_cvae(frames, conds, CvaeConfig(d_z=4, k=4, channels=(4, 4, 4), cond_width=4, hidden=8, epochs=1))
    bilstm = train_bilstm(make_training_windows(_smooth_latents()), config=_cfg(epochs=1))
    return cvae, bilstm


def _walker(n=20):
    return generate_synthetic_walker(SyntheticWalkerParams(), n, seed=3)


def test_no_occlusion_is_identity(tiny_models):
    seq = _walker()
    out = reconstruct_sequence(seq, _pa([1, 2, 3, 4] * 5, k=4), *tiny_models)
    assert all(a is b for a, b in zip(out.frames, seq.frames))


def test_pass_through_and_flags(tiny_models):
    seq = occlude_sequence(_walker(), 0.5, 2)
    states = np.where(seq.placeholder_mask, 5, (np.arange(20) % 4) + 1)
    rec = reconstruct(seq, _pa(states, k=4), *tiny_models)
    for i in range(20):
        if rec.occluded[i]:
            f = rec.sequence.frames[i]
            assert not f.is_occluded_placeholder
            assert f.pixels.shape == (64, 64) and f.pixels.min() >= 0 and f.pixels.max() <= 1
        else:
            assert rec.sequence.frames[i] is seq.frames[i]
    assert np.all((rec.condition_states >= 1) & (rec.condition_states <= 4))


def test_reconstruct_errors(tiny_models):
    seq = _walker()
    with pytest.raises(LengthMismatch):
        reconstruct(seq, _pa([1] * 19, k=4), *tiny_models)
    short = _walker(5)
    with pytest.raises(SequenceTooShort):
        reconstruct(short, _pa([1] * 5, k=4), *tiny_models)
    with pytest.raises(AllFramesOccluded):
        reconstruct(seq, _pa([5] * 20, k=4), *tiny_models)


def test_width_mismatch_detected(tiny_models):
    cvae, _ = tiny_models
    other = train_bilstm(make_training_windows(_smooth_latents(d=3)), config=_cfg(d_z=3, epochs=1))
    seq = occlude_sequence(_walker(), 0.5, 2)
    states = np.where(seq.placeholder_mask, 5, 1)
    with pytest.raises(DimensionMismatch):
        reconstruct(seq, _pa(states, k=4), cvae, other)


# -- trained toy pipeline ------------------------------------------------------------

def masked_latent_errors(toy) -> tuple[float, float]:
    """Masked-position squared error of the filter vs zero imputation on held-out windows."""
    windows = make_training_windows(latent_sequences(toy.probes, toy.keyposes, toy.cvae))
    masked = windows.copy()
    masked[:, [1, 3]] = 0.0
    out = filter_window(masked, toy.bilstm)
    filt = float(np.mean(np.sum((out[:, [1, 3]] - windows[:, [1, 3]]) ** 2, axis=-1)))
    zero = float(np.mean(np.sum(windows[:, [1, 3]] ** 2, axis=-1)))
    return filt, zero


@pytest.mark.slow
def test_filter_beats_zero_imputation(toy):
    filt, zero = masked_latent_errors(toy)
    assert filt < zero


@pytest.mark.slow
def test_reconstruct_53_percent_on_45_frames(toy):
    dices = []
    for j, probe in enumerate(toy.probes[::4]):
        seq = probe.__class__(probe.frames[:45], probe.subject_label, probe.sequence_id, probe.phases[:45])
        occ = occlude_sequence(seq, 0.53, 100 + j)
        rec = toy.pipeline.reconstruct(occ)
        dices += [dice_score(seq.frames[i], rec.sequence.frames[i]) for i in np.flatnonzero(rec.occluded)]
    assert np.mean(dices) >= 0.75


@pytest.mark.slow
def test_reconstruction_is_temporally_consistent(toy):
    k = toy.keyposes.k
    violations = []
    for j, probe in enumerate(toy.probes[::4]):
        rec = toy.pipeline.reconstruct(occlude_sequence(probe, 0.5, 200 + j))
        idx = toy.keyposes.nearest(rec.sequence.frames)
        step = np.mod(np.diff(idx), k)
        violations.append(np.mean(step >= k / 2))
    assert np.mean(violations) <= 0.10

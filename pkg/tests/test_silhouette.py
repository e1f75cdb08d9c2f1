import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from gaitrecon.errors import EmptyFrame, MissingPath, UnreadableImage
from gaitrecon.silhouette import (FrameGeometry, GaitSequence, ManifestEntry, SilhouetteFrame,
                                  SyntheticWalkerParams, autocorrelation, estimate_period, estimate_phases,
                                  foreground_area, generate_synthetic_walker, load_sequence, normalize_frame,
                                  read_manifest, save_sequence, synthetic_corpus, write_manifest)

G = FrameGeometry(64, 64)


def test_empty_mask_rejected():
    with pytest.raises(EmptyFrame):
        normalize_frame(np.zeros((100, 100), bool), G)


def test_full_mask_stays_full():
    out = normalize_frame(np.ones((100, 100), bool), G)
    assert out.pixels.shape == (64, 64)
    assert np.all(out.pixels == 1.0)


def test_rectangle_position_does_not_matter():
    outs = []
    for top, left in [(0, 0), (37, 101), (180, 190), (95, 3)]:
        raw = np.zeros((200, 200), bool)
        raw[top:top + 20, left:left + 10] = True
        outs.append(normalize_frame(raw, G).pixels)
    for o in outs[1:]:
        assert np.array_equal(o, outs[0])


def test_normalize_output_is_binary_and_centred(walker):
    raw = np.zeros((150, 90), bool)
    raw[10:140, 30:60] = True
    raw[60:70, 20:75] = True
    px = normalize_frame(raw, G).pixels
    assert set(np.unique(px)) <= {0.0, 1.0}
    assert px.dtype == np.float32
    # tall shape: scaled by height, so the box fills every row
    assert px.any(axis=1).all()
    cols = np.flatnonzero(px.any(axis=0))
    centroid = (px.sum(axis=0) * np.arange(64)).sum() / px.sum()
    assert abs(centroid - 31.5) <= 1.0
    assert cols.min() > 0 and cols.max() < 63


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 60), st.integers(5, 60), st.integers(0, 2 ** 31 - 1))
def test_normalize_idempotent(h, w, seed):
    raw = np.random.default_rng(seed).random((h, w)) > 0.6
    raw[h // 2, w // 2] = True
    once = normalize_frame(raw, G)
    twice = normalize_frame(once.pixels > 0.5, G)
    assert np.array_equal(once.pixels, twice.pixels)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 40), st.integers(0, 40))
def test_normalize_translation_invariant(seed, dy, dx):
    blob = np.random.default_rng(seed).random((20, 15)) > 0.5
    blob[10, 7] = True
    a = np.zeros((80, 80), bool)
    b = np.zeros((80, 80), bool)
    a[5:25, 5:20] = blob
    b[5 + dy:25 + dy, 5 + dx:20 + dx] = blob
    assert np.array_equal(normalize_frame(a, G).pixels, normalize_frame(b, G).pixels)


def test_geometry_validation():
    with pytest.raises(ValueError):
        FrameGeometry(0, 64)


def test_placeholder_frame_is_zero():
    f = SilhouetteFrame.placeholder(G)
    assert f.is_occluded_placeholder and not f.pixels.any()


def test_walker_is_periodic_and_deterministic():
    p = SyntheticWalkerParams(period=30)
    a = generate_synthetic_walker(p, 60, seed=4)
    b = generate_synthetic_walker(p, 60, seed=4)
    assert np.array_equal(a.frames[0].pixels, a.frames[30].pixels)
    for i in range(30):
        assert np.array_equal(a.frames[i].pixels, a.frames[i + 30].pixels)
    assert np.array_equal(a.stack(), b.stack())


def test_walker_values_binary():
    seq = generate_synthetic_walker(SyntheticWalkerParams(noise_rate=0.05), 20, seed=1)
    assert set(np.unique(seq.stack())) <= {0.0, 1.0}
    assert seq.phases.shape == (20,)
    assert np.all((seq.phases >= 0) & (seq.phases < 1))


def test_walker_area_autocorrelation_peaks_at_period():
    seq = generate_synthetic_walker(SyntheticWalkerParams(period=30), 150, seed=0)
    ac = autocorrelation(foreground_area(seq))
    lag = 20 + int(np.argmax(ac[20:45]))
    assert abs(lag - 30) <= 1
    assert estimate_period(foreground_area(seq)) in (29, 30, 31)


def test_walker_params_validated():
    with pytest.raises(ValueError):
        SyntheticWalkerParams(period=3)
    with pytest.raises(ValueError):
        SyntheticWalkerParams(noise_rate=0.2)


def test_estimated_phases_track_truth():
    seq = generate_synthetic_walker(SyntheticWalkerParams(period=30, phase_offset=0.3), 90, seed=0)
    est = estimate_phases(seq)
    # same cycle speed: the difference is a constant offset modulo 1
    diff = np.angle(np.exp(2j * np.pi * (est - seq.phases)))
    assert np.ptp(np.unwrap(diff)) < 0.05 * 2 * np.pi


def test_corpus_shape_and_labels():
    corpus = synthetic_corpus(3, 2, 12, seed=0)
    assert [s.sequence_id for s in corpus] == ["s000_q00", "s000_q01", "s001_q00", "s001_q01",
                                              "s002_q00", "s002_q01"]
    assert {s.subject_label for s in corpus} == {"s000", "s001", "s002"}
    assert all(len(s) == 12 for s in corpus)


def test_sequence_round_trip(tmp_path, walker):
    seq = GaitSequence(walker.frames[:5] + [SilhouetteFrame.placeholder(G)], subject_label="s7",
                       sequence_id="x", phases=np.linspace(0, 0.5, 6))
    save_sequence(seq, tmp_path / "x")
    back = load_sequence(tmp_path / "x", G)
    assert len(back) == 6
    assert back.subject_label == "s7"
    assert np.array_equal(back.stack(), seq.stack())
    assert back.placeholder_mask.tolist() == [False] * 5 + [True]
    assert np.allclose(back.phases, seq.phases, atol=1e-6)


def test_load_counts_files(tmp_path):
    for i in range(3):
        img = np.zeros((40, 30), np.uint8)
        img[5:35, 10:20] = 255
        Image.fromarray(img).save(tmp_path / f"frame_{i:05d}.png")
    assert len(load_sequence(tmp_path, G)) == 3


def test_load_mixed_resolutions(tmp_path):
    for i, shape in enumerate([(40, 30), (120, 90), (77, 201)]):
        img = np.zeros(shape, np.uint8)
        img[shape[0] // 4:3 * shape[0] // 4, shape[1] // 3:2 * shape[1] // 3] = 255
        Image.fromarray(img).save(tmp_path / f"frame_{i:05d}.png")
    seq = load_sequence(tmp_path, G)
    assert {f.pixels.shape for f in seq.frames} == {(64, 64)}


def test_load_missing_directory(tmp_path):
    with pytest.raises(MissingPath):
        load_sequence(tmp_path / "nope", G)


def test_load_unreadable_names_file(tmp_path):
    (tmp_path / "frame_00000.png").write_bytes(b"not an image")
    with pytest.raises(UnreadableImage, match="frame_00000.png"):
        load_sequence(tmp_path, G)


def test_manifest_round_trip(tmp_path):
    entries = [ManifestEntry("a", "s1", "a"), ManifestEntry("b", "s2", "/abs/b")]
    write_manifest(entries, tmp_path / "m.txt")
    back = read_manifest(tmp_path / "m.txt")
    assert [e.sequence_id for e in back] == ["a", "b"]
    assert back[0].path == str(tmp_path / "a")
    assert back[1].path == "/abs/b"

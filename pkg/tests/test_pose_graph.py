import numpy as np
import pytest

from gaitrecon.errors import GeometryMismatch
from gaitrecon.keypose import KeyPoseSet, PcaSubspace
from gaitrecon.pose_graph import (DistanceMatrix, PoseAssignment, StateTransitionModel, detect_occlusion_runs,
                                  distance_matrix, map_frames, read_assignment, write_assignment)
from gaitrecon.silhouette import FrameGeometry, GaitSequence, SilhouetteFrame

from oracles import brute_force_path, random_distance_matrix


def test_transition_predicate():
    t = StateTransitionModel(4)
    assert t.allowed(1, 1) and t.allowed(1, 2) and t.allowed(4, 1)
    assert not t.allowed(1, 3) and not t.allowed(2, 1)
    assert all(t.allowed(i, 5) and t.allowed(5, i) for i in range(1, 6))
    assert not t.allowed(0, 1) and not t.allowed(1, 6)


def test_single_frame():
    pa = map_frames(DistanceMatrix(np.array([[0.1, 5.0, 3.0]])))
    assert pa.states.tolist() == [1]
    assert pa.total_cost == pytest.approx(0.1)


def test_everything_occluded_when_tau_is_cheapest():
    m = np.full((7, 4), 2.0)
    m[:, -1] = 0.5
    pa = map_frames(DistanceMatrix(m))
    assert pa.states.tolist() == [4] * 7
    assert pa.total_cost == pytest.approx(7 * 0.5)


def test_greedy_would_break_transitions():
    # per-frame argmin jumps 1 -> 3, which the chain forbids
    m = np.array([[0.0, 1.0, 9.0, 5.0],
                  [9.0, 9.0, 0.0, 5.0],
                  [9.0, 9.0, 0.0, 5.0],
                  [0.0, 9.0, 9.0, 5.0]])
    pa = map_frames(DistanceMatrix(m))
    cost, path, n_opt = brute_force_path(m, 3)
    assert n_opt == 1
    assert pa.total_cost == cost
    assert tuple(pa.states) == path
    assert pa.states.tolist() != [1, 3, 3, 1]


def test_matches_brute_force_small(rng):
    for _ in range(150):
        n, k = int(rng.integers(1, 6)), int(rng.integers(2, 4))
        m = random_distance_matrix(rng, n, k)
        pa = map_frames(DistanceMatrix(m))
        cost, path, n_opt = brute_force_path(m, k)
        assert pa.total_cost == cost
        if n_opt == 1:
            assert tuple(pa.states) == path


def test_path_validity_and_cost_consistency(rng):
    for _ in range(200):
        n, k = int(rng.integers(1, 30)), int(rng.integers(2, 9))
        m = random_distance_matrix(rng, n, k)
        pa = map_frames(DistanceMatrix(m))
        t = StateTransitionModel(k)
        assert all(t.allowed(int(a), int(b)) for a, b in zip(pa.states, pa.states[1:]))
        assert abs(pa.total_cost - m[np.arange(n), pa.states - 1].sum()) < 1e-9
        assert pa.occluded_indices == {i for i, s in enumerate(pa.states) if s == k + 1}


def test_raising_tau_never_adds_occlusions(rng):
    for _ in range(200):
        n, k = int(rng.integers(2, 25)), int(rng.integers(2, 7))
        m = random_distance_matrix(rng, n, k)
        counts = []
        for tau in np.linspace(0.0, 3.5, 15):
            m2 = m.copy()
            m2[:, -1] = tau
            counts.append(int(map_frames(DistanceMatrix(m2)).occluded.sum()))
        assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_ties_go_to_lowest_state():
    m = np.array([[1.0, 1.0, 1.0, 1.0]])
    assert map_frames(DistanceMatrix(m)).states.tolist() == [1]
    m = np.array([[1.0, 1.0, 5.0], [1.0, 1.0, 5.0]])
    # (1,1), (1,2), (2,2) and (2,1) all cost 2; lowest index wins at each step
    assert map_frames(DistanceMatrix(m)).states.tolist() == [1, 1]


def test_model_size_checked():
    with pytest.raises(ValueError):
        map_frames(DistanceMatrix(np.zeros((2, 4))), StateTransitionModel(2))


def _tiny_keyposes(embeddings, tau=0.7) -> KeyPoseSet:
    g = FrameGeometry(width=2, height=1)
    sub = PcaSubspace(mean_frame=np.zeros(2), basis=np.eye(2), geometry=g)
    k = len(embeddings)
    return KeyPoseSet(np.asarray(embeddings, float), sub, tau, np.arange(k) / k, np.ones(k, int))


def test_distance_matrix_by_hand():
    kp = _tiny_keyposes([[0.0, 0.0], [1.0, 1.0]])
    seq = GaitSequence([SilhouetteFrame(np.array([[1.0, 0.0]], np.float32)),
                        SilhouetteFrame(np.array([[0.25, 0.5]], np.float32))])
    m = distance_matrix(seq, kp).values
    expected = np.array([[1.0, 1.0, 0.7],
                         [np.sqrt(0.25 ** 2 + 0.5 ** 2), np.sqrt(0.75 ** 2 + 0.5 ** 2), 0.7]])
    assert np.max(np.abs(m - expected)) < 1e-9


def test_distance_zero_at_keypose():
    kp = _tiny_keyposes([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    seq = GaitSequence([SilhouetteFrame(np.array([[0.0, 1.0]], np.float32))] * 3)
    m = distance_matrix(seq, kp).values
    assert np.all(m[:, 2] == 0.0)
    assert np.all(m[:, -1] == 0.7)


def test_distance_geometry_mismatch():
    kp = _tiny_keyposes([[0.0, 0.0], [1.0, 1.0]])
    seq = GaitSequence([SilhouetteFrame(np.zeros((2, 2), np.float32))])
    with pytest.raises(GeometryMismatch):
        distance_matrix(seq, kp)


def test_runs_examples():
    o = 3
    assert detect_occlusion_runs(PoseAssignment(np.array([1, 1, 2]), 0.0, 2)) == []
    pa = PoseAssignment(np.array([1, o, o, 2, o]), 0.0, 2)
    assert detect_occlusion_runs(pa) == [(1, 2), (4, 1)]


def test_runs_reproduce_occluded_indices(rng):
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        states = rng.integers(1, k + 2, size=int(rng.integers(0, 25)))
        pa = PoseAssignment(states, 0.0, k)
        runs = detect_occlusion_runs(pa)
        covered = [s + j for s, n in runs for j in range(n)]
        assert covered == sorted(pa.occluded_indices)
        # maximal: runs never touch
        assert all(b[0] > a[0] + a[1] for a, b in zip(runs, runs[1:]))


def test_assignment_file_round_trip(tmp_path):
    pa = PoseAssignment(np.array([1, 2, 5, 5, 3]), 1.5, 4)
    write_assignment(pa, tmp_path / "a.txt")
    lines = (tmp_path / "a.txt").read_text().splitlines()
    assert lines[2] == "2 5 1" and lines[0] == "0 1 0"
    assert read_assignment(tmp_path / "a.txt", 4).states.tolist() == pa.states.tolist()

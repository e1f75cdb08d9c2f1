"""Frame-to-key-pose labelling by shortest path over the state DAG.

States are numbered 1..K for key poses and K+1 for the occlusion state, so
exported labels read the same as the pose numbers in reports.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryMismatch
from .keypose import KeyPoseSet
from .silhouette import GaitSequence


@dataclass(frozen=True)
class StateTransitionModel:
    """Cyclic left-to-right key-pose chain plus a fully connected occlusion state."""
    k: int

    @property
    def occlusion_state(self) -> int:
        return self.k + 1

    @property
    def n_states(self) -> int:
        return self.k + 1

    def allowed(self, i: int, j: int) -> bool:
        o = self.occlusion_state
        if not (1 <= i <= o and 1 <= j <= o):
            return False
        if i == o or j == o:
            return True
        return j == i or j == (i % self.k) + 1

    def predecessors(self, j: int) -> list[int]:
        """States that may precede ``j``, ascending."""
        o = self.occlusion_state
        if j == o:
            return list(range(1, o + 1))
        prev = self.k if j == 1 else j - 1
        return sorted({j, prev, o})


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray   # (N, K+1)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PoseAssignment:
    states: np.ndarray   # (N,) ints in 1..K+1
    total_cost: float
    k: int

    @property
    def occlusion_state(self) -> int:
        return self.k + 1

    @property
    def occluded(self) -> np.ndarray:
        return self.states == self.occlusion_state

    @property
    def occluded_indices(self) -> set[int]:
        return set(np.flatnonzero(self.occluded).tolist())

    def __len__(self) -> int:
        return len(self.states)


def distance_matrix(seq: GaitSequence, kp: KeyPoseSet) -> DistanceMatrix:
    """Euclidean distances in the PCA subspace; the last column is tau."""
    if seq.geometry != kp.geometry:
        raise GeometryMismatch(f"sequence geometry {seq.geometry} differs from key poses {kp.geometry}",
                               module="pose_graph")
    coords = np.atleast_2d(kp.subspace.project(seq.stack()))
    dist = np.linalg.norm(coords[:, None, :] - kp.embeddings[None], axis=2)
    tau = np.full((len(seq), 1), kp.occlusion_threshold)
    return DistanceMatrix(np.hstack([dist, tau]))


def map_frames(m: DistanceMatrix, model: StateTransitionModel | None = None) -> PoseAssignment:
    """Minimum vertex-weight path through the frame-by-state DAG.

    Any state may start the path. Ties go to the lowest state index, both
    when choosing a predecessor and when choosing the final state.
    """
    values = np.asarray(m.values, dtype=np.float64)
    n, n_states = values.shape
    if model is None:
        model = StateTransitionModel(n_states - 1)
    if n_states != model.n_states:
        raise ValueError(f"matrix has {n_states} states, model expects {model.n_states}")
    preds = [np.array(model.predecessors(j)) - 1 for j in range(1, n_states + 1)]
    cost = np.empty((n, n_states))
    back = np.zeros((n, n_states), dtype=np.int64)
    cost[0] = values[0]
    for i in range(1, n):
        prev = cost[i - 1]
        for j in range(n_states):
            p = preds[j]
            best = p[np.argmin(prev[p])]   # p is ascending, argmin returns first minimum
            back[i, j] = best
            cost[i, j] = prev[best] + values[i, j]
    states = np.empty(n, dtype=np.int64)
    states[-1] = int(np.argmin(cost[-1]))
    for i in range(n - 1, 0, -1):
        states[i - 1] = back[i, states[i]]
    return PoseAssignment(states=states + 1, total_cost=float(cost[-1, states[-1]]), k=model.k)


def detect_occlusion_runs(pa: PoseAssignment) -> list[tuple[int, int]]:
    """Maximal runs of occluded frames as ``(start, length)``, 0-based starts."""
    runs = []
    start = None
    for i, occ in enumerate(pa.occluded):
        if occ and start is None:
            start = i
        elif not occ and start is not None:
            runs.append((start, i - start))
            start = None
    if start is not None:
        runs.append((start, len(pa) - start))
    return runs


def label_sequence(seq: GaitSequence, kp: KeyPoseSet) -> PoseAssignment:
    return map_frames(distance_matrix(seq, kp), StateTransitionModel(kp.k))


def write_assignment(pa: PoseAssignment, path) -> Path:
    """``<frame_index> <state_index> <is_occluded>`` per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    occ = pa.occluded
    path.write_text("".join(f"{i} {int(s)} {int(o)}\n" for i, (s, o) in enumerate(zip(pa.states, occ))))
    return path


def read_assignment(path, k: int) -> PoseAssignment:
    states = [int(line.split()[1]) for line in Path(path).read_text().splitlines() if line.strip()]
    return PoseAssignment(states=np.array(states, dtype=np.int64), total_cost=float("nan"), k=k)

"""Exact K-nearest-neighbour retrieval of pose exemplars with a K-d tree."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .pose import FEATURE_DIM

ACTIVITIES = ("none", "texting", "phone_call")
K_GRID = (25, 50, 100, 200)


@dataclass
class Exemplar:
    """One training pedestrian: pose descriptor, hand objects, gaze and activity."""

    id: str
    pose_feature: np.ndarray
    left_object: str = "none"
    right_object: str = "none"
    gaze: np.ndarray = None
    activity: int = 0
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def object_for(self, hand_side):
        return self.left_object if hand_side == "left" else self.right_object


@dataclass
class NeighborSet:
    exemplars: list
    distances: np.ndarray

    def __len__(self):
        return len(self.exemplars)

    @property
    def ids(self):
        return [e.id for e in self.exemplars]

    @property
    def activities(self):
        return np.array([e.activity for e in self.exemplars], dtype=int)


@dataclass
class _Node:
    dim: int = -1
    split: float = 0.0
    left: "_Node" = None
    right: "_Node" = None
    members: np.ndarray = None  # leaf only


class PoseIndex:
    """Balanced K-d tree (median split, dimensions cycled by depth).

    Neighbours are ordered by (Euclidean distance, exemplar id); the search is
    exact.
    """

    def __init__(self, exemplars, leaf_size=8):
        self.exemplars = list(exemplars)
        if not self.exemplars:
            raise ValueError("cannot build an index over zero exemplars")
        self.points = np.vstack([np.asarray(e.pose_feature, float) for e in self.exemplars])
        if self.points.shape[1] != FEATURE_DIM:
            raise ValueError(f"pose features must have length {FEATURE_DIM}")
        order = sorted(range(len(self.exemplars)), key=lambda i: self.exemplars[i].id)
        self.rank = np.empty(len(order), int)
        self.rank[order] = np.arange(len(order))
        self.leaf_size = leaf_size
        self.root = self._build(np.arange(len(self.exemplars)), 0)

    def __len__(self):
        return len(self.exemplars)

    def _build(self, idx, depth):
        if len(idx) <= self.leaf_size:
            return _Node(members=idx)
        dim = depth % self.points.shape[1]
        idx = idx[np.argsort(self.points[idx, dim], kind="stable")]
        mid = len(idx) // 2
        return _Node(
            dim=dim,
            split=float(self.points[idx[mid], dim]),
            left=self._build(idx[:mid], depth + 1),
            right=self._build(idx[mid:], depth + 1),
        )

    def query(self, feature, k) -> NeighborSet:
        q = np.asarray(feature, float)
        if q.shape != (self.points.shape[1],):
            raise ValueError(f"query must have length {self.points.shape[1]}")
        if not 1 <= k <= len(self):
            raise ValueError(f"k={k} outside [1, {len(self)}]")
        heap = []  # max-heap on (d2, rank) via negation

        def visit(node):
            if node.members is not None:
                diff = self.points[node.members] - q
                d2 = np.einsum("ij,ij->i", diff, diff)
                for i, d in zip(node.members, d2):
                    item = (-d, -self.rank[i], i)
                    if len(heap) < k:
                        heapq.heappush(heap, item)
                    elif item > heap[0]:
                        heapq.heapreplace(heap, item)
                return
            delta = q[node.dim] - node.split
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            visit(near)
            if len(heap) < k or delta * delta <= -heap[0][0]:
                visit(far)

        visit(self.root)
        found = sorted((-d, -r, i) for d, r, i in heap)
        idx = [i for _, _, i in found]
        return NeighborSet([self.exemplars[i] for i in idx], np.sqrt([d for d, _, _ in found]))


def build_index(exemplars) -> PoseIndex:
    return PoseIndex(exemplars)

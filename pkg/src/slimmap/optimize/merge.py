"""Merging duplicate landmarks after cross-session alignment."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..mapmodel import Kind, SlimMap
from ..vectorize import DegenerateFit, init_landmark_from_observations


class _DSU:
    def __init__(self, items):
        self.p = {i: i for i in items}

    def find(self, i):
        while self.p[i] != i:
            self.p[i] = self.p[self.p[i]]
            i = self.p[i]
        return i

    def union(self, a, b):
        a, b = self.find(a), self.find(b)
        if a != b:
            self.p[max(a, b)] = min(a, b)


EXTENT_SLACK = 0.25


def _mergeable(a, b, cos_gate, plane_dist, line_dist) -> bool:
    if a.kind != b.kind or a.label != b.label:
        return False
    if abs(float(a.normal @ b.normal)) < cos_gate:
        return False
    # the smaller extent must sit (nearly) inside the larger one; merely touching
    # extents would chain neighbouring coplanar tiles into one growing landmark
    gap = np.linalg.norm(a.centroid - b.centroid)
    small, large = sorted((a.radius, b.radius))
    if gap + small >= (1.0 + EXTENT_SLACK) * large:
        return False
    if a.kind == Kind.PLANE:
        na, da = a.point_normal()
        nb, db = b.point_normal()
        off = max(abs(float(na @ b.centroid + da)), abs(float(nb @ a.centroid + db)))
        return off < plane_dist
    off = max(np.linalg.norm(a.project(b.centroid) - b.centroid), np.linalg.norm(b.project(a.centroid) - a.centroid))
    return off < line_dist


def _refit(m: SlimMap, members: list, rep: int):
    obs, extra = [], []
    mem = set(members)
    for kf in m.keyframes.values():
        for lid, o in kf.observations:
            if lid in mem:
                obs.append((kf.pose, o))
    for f in m.recovered:
        if f.landmark in mem:
            kind = m.landmarks[f.landmark].kind
            pose = m.keyframes[f.keyframes[0]].pose
            w = float(np.trace(f.info)) / len(f.info)
            extra.append((pose.apply(np.asarray(f.z)), w, kind))
    lm = init_landmark_from_observations(obs, m.landmarks[rep].label, rep, extra)
    lm.radius = max([lm.radius] + [m.landmarks[i].radius for i in members])
    return lm


def merge_landmarks(
    m: SlimMap, angle_deg: float = 5.0, plane_distance: float = 0.2, line_distance: float = 1.0
) -> dict:
    """Union duplicate landmarks in place and return ``{old_id: new_id}``.

    Runs to a fixed point, so applying it twice equals applying it once.
    """
    cos_gate = np.cos(np.radians(angle_deg))
    remap: dict = {}
    while True:
        ids = sorted(m.landmarks)
        if len(ids) < 2:
            break
        cents = np.array([m.landmarks[i].centroid for i in ids])
        rmax = max(m.landmarks[i].radius for i in ids)
        tree = cKDTree(cents)
        dsu = _DSU(ids)
        for a, b in sorted(tree.query_pairs(rmax)):
            la, lb = m.landmarks[ids[a]], m.landmarks[ids[b]]
            if _mergeable(la, lb, cos_gate, plane_distance, line_distance):
                dsu.union(la.id, lb.id)
        groups: dict = {}
        for i in ids:
            groups.setdefault(dsu.find(i), []).append(i)
        merged = False
        step_map = {}
        for rep, members in groups.items():
            if len(members) < 2:
                continue
            try:
                new = _refit(m, members, rep)
            except DegenerateFit:
                continue
            merged = True
            for i in members:
                step_map[i] = rep
                if i != rep:
                    del m.landmarks[i]
            m.landmarks[rep] = new
        if not merged:
            break
        for kf in m.keyframes.values():
            kf.observations = [(step_map.get(l, l), o) for l, o in kf.observations]
        for f in m.recovered:
            if f.landmark >= 0:
                f.landmark = step_map.get(f.landmark, f.landmark)
        for old in list(remap):
            remap[old] = step_map.get(remap[old], remap[old])
        for old, new in step_map.items():
            if old != new:
                remap[old] = new
    m.rebuild_observers()
    return remap

"""Versioned binary map archives, merging of maps and byte accounting.

Layout (little endian): ``"SLIM"``, u16 version, u8 archive kind, then
varint counts and records. States are f64; information entries are packed
upper triangles of f32. The localization archive keeps one label/kind byte
and the minimal parameters of each landmark, nothing else.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .geometry import Pose
from .binio import FormatError, Reader, Writer
from .mapmodel import OBS_POINTS, PARAM_DIM, Keyframe, Kind, Label, Landmark, Observation, OdometryFactor, RecoveredFactor, SlimMap

VERSION = 1
FULL = 0
LOCALIZATION = 1
EXTENTS = 1  # localization archive flag: records carry centroid and radius

_RECOVERED_CODES = {"prior": 0, "relpose": 1, "line": 2, "plane": 3}
_RECOVERED_KINDS = {v: k for k, v in _RECOVERED_CODES.items()}


class IdCollision(RuntimeError):
    pass


class IoFailure(OSError):
    pass


def _tag(kind: Kind, label: Label) -> int:
    return int(label) << 1 | int(kind)


def _untag(b: int):
    return Kind(b & 1), Label(b >> 1)


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


def _sym_from_upper(U: np.ndarray) -> np.ndarray:
    return np.triu(U) + np.triu(U, 1).T


def encode_full(m: SlimMap) -> bytes:
    w = Writer()
    w.header(FULL, VERSION)
    sessions = list(m.sessions)
    for n in (len(sessions), len(m.landmarks), len(m.keyframes), len(m.odometry), len(m.recovered)):
        w.varint(n)
    for s in sessions:
        w.varint(s)
    for lid in sorted(m.landmarks):
        lm = m.landmarks[lid]
        w.varint(lid)
        w.u8(_tag(lm.kind, lm.label))
        w.f64(lm.params)
        w.f64(lm.centroid)
        w.f64([lm.radius])
    for kid in sorted(m.keyframes):
        kf = m.keyframes[kid]
        w.varint(kid)
        w.varint(kf.session)
        w.varint(kf.index)
        w.pose(kf.pose)
        w.varint(len(kf.observations))
        for lid, obs in kf.observations:
            w.varint(lid)
            w.u8(int(obs.kind))
            w.f64(obs.points.ravel())
            w.f32([obs.sqrt_info])
            w.varint(obs.count)
    for f in m.odometry:
        w.varint(f.a)
        w.varint(f.b)
        w.pose(f.measurement)
        w.upper(np.asarray(f.sqrt_info))
    for f in m.recovered:
        w.u8(_RECOVERED_CODES[f.kind])
        w.varint(len(f.keyframes))
        for k in f.keyframes:
            w.varint(k)
        w.varint(f.landmark + 1)
        if f.kind in ("prior", "relpose"):
            w.pose(f.z)
        else:
            w.f64(np.asarray(f.z).ravel())
        w.upper(np.asarray(f.info))
    return w.getvalue()


def encode_localization(m: SlimMap, extents: bool = True) -> bytes:
    """Label/kind byte and minimal parameters per landmark.

    With ``extents`` each record also carries the landmark centroid and
    radius (4 more f64), which tracking uses to keep associations local.
    """
    w = Writer()
    w.header(LOCALIZATION, VERSION)
    w.u8(EXTENTS if extents else 0)
    w.varint(len(m.landmarks))
    for lid in sorted(m.landmarks):
        lm = m.landmarks[lid]
        w.u8(_tag(lm.kind, lm.label))
        w.f64(lm.params)
        if extents:
            w.f64(lm.centroid)
            w.f64([lm.radius])
    return w.getvalue()


def decode(data: bytes) -> SlimMap:
    """Parse either archive kind; a localization archive yields landmarks only."""
    r = Reader(data)
    kind = r.header(VERSION)
    if kind == LOCALIZATION:
        m = SlimMap()
        flags = r.u8()
        if flags & ~EXTENTS:
            raise FormatError(f"unknown localization flags {flags:#x}")
        for i in range(r.varint()):
            k, label = _untag(r.u8())
            params = r.f64(PARAM_DIM[k])
            if flags & EXTENTS:
                centroid, radius = r.f64(3), float(r.f64(1)[0])
                m.landmarks[i] = Landmark(i, k, label, params, centroid, radius)
            else:
                m.landmarks[i] = Landmark(i, k, label, params)
        if not r.done():
            raise FormatError("trailing bytes")
        return m
    if kind != FULL:
        raise FormatError(f"unknown archive kind {kind}")
    n_s, n_l, n_k, n_o, n_r = (r.varint() for _ in range(5))
    m = SlimMap(sessions=[r.varint() for _ in range(n_s)])
    for _ in range(n_l):
        lid = r.varint()
        k, label = _untag(r.u8())
        params = r.f64(PARAM_DIM[k])
        centroid = r.f64(3)
        radius = float(r.f64(1)[0])
        m.landmarks[lid] = Landmark(lid, k, label, params, centroid, radius)
    for _ in range(n_k):
        kid, session, index = r.varint(), r.varint(), r.varint()
        kf = Keyframe(kid, r.pose(), session, index)
        for _ in range(r.varint()):
            lid = r.varint()
            k = Kind(r.u8())
            pts = r.f64(3 * OBS_POINTS[k])
            sq = float(r.f32(1)[0])
            kf.observations.append((lid, Observation(k, pts, sq, r.varint())))
        m.keyframes[kid] = kf
    for _ in range(n_o):
        a, b = r.varint(), r.varint()
        z = r.pose()
        m.odometry.append(OdometryFactor(a, b, z, r.upper(6)))
    for _ in range(n_r):
        kind_s = _RECOVERED_KINDS[r.u8()]
        kfs = tuple(r.varint() for _ in range(r.varint()))
        lid = r.varint() - 1
        if kind_s in ("prior", "relpose"):
            z, dim = r.pose(), 6
        else:
            n = OBS_POINTS[Kind.LINE if kind_s == "line" else Kind.PLANE]
            z, dim = r.f64(3 * n).reshape(n, 3), 4 if kind_s == "line" else 3
        m.recovered.append(RecoveredFactor(kind_s, kfs, lid, z, _sym_from_upper(r.upper(dim))))
    if not r.done():
        raise FormatError("trailing bytes")
    m.rebuild_observers()
    return m


def _write(path, data: bytes) -> int:
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise IoFailure(str(e)) from e
    return len(data)


def serialize_full(m: SlimMap, path) -> int:
    """Write the complete archive; returns the number of bytes written."""
    m.validate()
    return _write(path, encode_full(m))


def serialize_localization_only(m: SlimMap, path, extents: bool = True) -> int:
    return _write(path, encode_localization(m, extents))


def deserialize(path) -> SlimMap:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(str(e)) from e
    return decode(data)


def file_size(path) -> int:
    return os.path.getsize(path)


# ---------------------------------------------------------------------------
# canonical form and comparison
# ---------------------------------------------------------------------------


def canonicalize(m: SlimMap) -> SlimMap:
    """Round information entries to f32 and symmetrise them, as the archive stores them."""
    c = m.copy()
    for kf in c.keyframes.values():
        for _, obs in kf.observations:
            obs.sqrt_info = float(np.float32(obs.sqrt_info))
    for f in c.odometry:
        f.sqrt_info = np.triu(np.asarray(f.sqrt_info)).astype(np.float32).astype(float)
    for f in c.recovered:
        f.info = _sym_from_upper(np.asarray(f.info).astype(np.float32).astype(float))
        if f.kind not in ("prior", "relpose"):
            f.z = np.asarray(f.z, dtype=float).reshape(-1, 3)
    c.rebuild_observers()
    return c


def _same(a, b) -> bool:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def maps_identical(a: SlimMap, b: SlimMap) -> bool:
    """Bit-level equality of every stored field, compared field by field."""
    if list(a.sessions) != list(b.sessions) or sorted(a.landmarks) != sorted(b.landmarks):
        return False
    if sorted(a.keyframes) != sorted(b.keyframes) or len(a.odometry) != len(b.odometry):
        return False
    if len(a.recovered) != len(b.recovered):
        return False
    for k, la in a.landmarks.items():
        lb = b.landmarks[k]
        if (la.kind, la.label, la.observers) != (lb.kind, lb.label, lb.observers):
            return False
        if not (_same(la.params, lb.params) and _same(la.centroid, lb.centroid) and _same(la.radius, lb.radius)):
            return False
    for k, ka in a.keyframes.items():
        kb = b.keyframes[k]
        if (ka.session, ka.index, len(ka.observations)) != (kb.session, kb.index, len(kb.observations)):
            return False
        if not (_same(ka.pose.rotation, kb.pose.rotation) and _same(ka.pose.translation, kb.pose.translation)):
            return False
        for (la, oa), (lb, ob) in zip(ka.observations, kb.observations):
            if (la, oa.kind, oa.count) != (lb, ob.kind, ob.count):
                return False
            if not (_same(oa.points, ob.points) and _same(oa.sqrt_info, ob.sqrt_info)):
                return False
    for fa, fb in zip(a.odometry, b.odometry):
        if (fa.a, fa.b) != (fb.a, fb.b) or not _same(fa.sqrt_info, fb.sqrt_info):
            return False
        if not (_same(fa.measurement.rotation, fb.measurement.rotation)
                and _same(fa.measurement.translation, fb.measurement.translation)):
            return False
    for fa, fb in zip(a.recovered, b.recovered):
        if (fa.kind, tuple(fa.keyframes), fa.landmark) != (fb.kind, tuple(fb.keyframes), fb.landmark):
            return False
        if not _same(fa.info, fb.info):
            return False
        if isinstance(fa.z, Pose) != isinstance(fb.z, Pose):
            return False
        za = (fa.z.rotation, fa.z.translation) if isinstance(fa.z, Pose) else (fa.z,)
        zb = (fb.z.rotation, fb.z.translation) if isinstance(fb.z, Pose) else (fb.z,)
        if not all(_same(x, y) for x, y in zip(za, zb)):
            return False
    return True


# ---------------------------------------------------------------------------
# merging
# ---------------------------------------------------------------------------


def _renumber(ids: list, taken) -> dict:
    """Keep free ids; colliding ones move past every id either side uses."""
    fresh = max([*taken, *ids, -1]) + 1
    out = {}
    for i in ids:
        if i in taken:
            out[i], fresh = fresh, fresh + 1
        else:
            out[i] = i
    return out


def merge_into_base(base: SlimMap, sub: SlimMap) -> tuple:
    """Union ``sub`` into ``base`` in place, renumbering colliding ids.

    Returns ``(keyframe_map, landmark_map)`` from sub ids to base ids. Both
    maps must already live in the same frame.
    """
    kf_map = _renumber(sorted(sub.keyframes), base.keyframes)
    lm_map = _renumber(sorted(sub.landmarks), base.landmarks)
    if len(set(kf_map.values())) != len(kf_map) or len(set(lm_map.values())) != len(lm_map):
        raise IdCollision("id remapping is not injective")
    for l, lm in sorted(sub.landmarks.items()):
        new = lm_map[l]
        if new in base.landmarks:
            raise IdCollision(f"landmark {new} already in base")
        base.landmarks[new] = Landmark(new, lm.kind, lm.label, lm.params.copy(), lm.centroid.copy(), lm.radius)
    for k, kf in sorted(sub.keyframes.items()):
        new = kf_map[k]
        if new in base.keyframes:
            raise IdCollision(f"keyframe {new} already in base")
        obs = [(lm_map[l], o) for l, o in kf.observations]
        base.keyframes[new] = Keyframe(new, kf.pose, kf.session, kf.index, obs)
    for f in sub.odometry:
        base.odometry.append(OdometryFactor(kf_map[f.a], kf_map[f.b], f.measurement, f.sqrt_info))
    for f in sub.recovered:
        lid = lm_map[f.landmark] if f.landmark >= 0 else -1
        base.recovered.append(RecoveredFactor(f.kind, tuple(kf_map[k] for k in f.keyframes), lid, f.z, f.info))
    for s in sub.sessions:
        if s not in base.sessions:
            base.sessions.append(s)
    base.rebuild_observers()
    return kf_map, lm_map


def map_bytes(m: SlimMap) -> tuple[int, int]:
    """``(full, localization_only)`` archive sizes without touching the disk."""
    return len(encode_full(m)), len(encode_localization(m))


def header_size(kind: int = FULL) -> int:
    return len(encode_full(SlimMap())) if kind == FULL else len(encode_localization(SlimMap()))


__all__ = [
    "IdCollision",
    "IoFailure",
    "FormatError",
    "canonicalize",
    "decode",
    "deserialize",
    "encode_full",
    "encode_localization",
    "file_size",
    "header_size",
    "map_bytes",
    "maps_identical",
    "merge_into_base",
    "serialize_full",
    "serialize_localization_only",
]

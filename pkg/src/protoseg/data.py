"""Point clouds: the PCL1 file format, synthetic scenes and block slicing."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PCL1"
HAS_INSTANCE = 0x01
HAS_SEMANTIC = 0x02
SHAPES = ("box", "sphere", "plane")


class FormatError(ValueError):
    pass


@dataclass
class PointCloud:
    """N points with I channels; the first three channels are XYZ in metres."""

    data: np.ndarray
    instance_labels: np.ndarray | None = None
    semantic_labels: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 3:
            raise ValueError(f"point cloud needs shape (N>=1, I>=3), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("point cloud contains non-finite values")
        for attr in ("instance_labels", "semantic_labels"):
            lab = getattr(self, attr)
            if lab is None:
                continue
            lab = np.asarray(lab, dtype=np.int64)
            if lab.shape != (self.n_points,):
                raise ValueError(f"{attr} has shape {lab.shape}, expected ({self.n_points},)")
            if lab.size and lab.min() < -1:
                raise ValueError(f"{attr} contains ids below -1")
            setattr(self, attr, lab)

    @property
    def n_points(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return PointCloud(self.data[idx], pick(self.instance_labels), pick(self.semantic_labels))


# -- PCL1 file format ------------------------------------------------------

def encode_cloud(cloud: PointCloud) -> bytes:
    flags = (HAS_INSTANCE if cloud.instance_labels is not None else 0) | (
        HAS_SEMANTIC if cloud.semantic_labels is not None else 0)
    parts = [MAGIC, struct.pack("<BII", flags, cloud.n_points, cloud.n_channels),
             np.ascontiguousarray(cloud.data, dtype="<f4").tobytes()]
    if cloud.instance_labels is not None:
        parts.append(np.ascontiguousarray(cloud.instance_labels, dtype="<i4").tobytes())
    if cloud.semantic_labels is not None:
        parts.append(np.ascontiguousarray(cloud.semantic_labels, dtype="<i4").tobytes())
    return b"".join(parts)


def decode_cloud(buf: bytes) -> PointCloud:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic at byte 0")
    if len(buf) < 13:
        raise FormatError(f"truncated header at byte {len(buf)}")
    flags, n, i = struct.unpack_from("<BII", buf, 4)
    if flags & ~(HAS_INSTANCE | HAS_SEMANTIC):
        raise FormatError(f"unknown flag bits {flags:#04x} at byte 4")
    if n < 1 or i < 3:
        raise FormatError(f"invalid dimensions N={n}, I={i} at byte 5")
    n_labels = bin(flags).count("1")
    expected = 13 + 4 * n * i + 4 * n * n_labels
    if len(buf) != expected:
        what = "truncated" if len(buf) < expected else "oversized"
        raise FormatError(f"{what} payload: expected {expected} bytes, file ends at byte {len(buf)}")
    pos = 13
    data = np.frombuffer(buf, dtype="<f4", count=n * i, offset=pos).reshape(n, i).astype(np.float64)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data.reshape(-1)))[0])
        raise FormatError(f"non-finite channel value at byte {pos + 4 * bad}")
    pos += 4 * n * i
    labels = {}
    for bit, key in ((HAS_INSTANCE, "instance_labels"), (HAS_SEMANTIC, "semantic_labels")):
        if flags & bit:
            lab = np.frombuffer(buf, dtype="<i4", count=n, offset=pos).astype(np.int64)
            if lab.min() < -1:
                bad = int(np.flatnonzero(lab < -1)[0])
                raise FormatError(f"label below -1 at byte {pos + 4 * bad}")
            labels[key] = lab
            pos += 4 * n
    return PointCloud(data, **labels)


def write_cloud(cloud: PointCloud, path: str | Path) -> None:
    Path(path).write_bytes(encode_cloud(cloud))


def read_cloud(path: str | Path) -> PointCloud:
    return decode_cloud(Path(path).read_bytes())


# -- synthetic scenes -------------------------------------------------------

@dataclass
class SynthConfig:
    seed: int = 0
    n_points: int = 1024
    instances_range: tuple[int, int] = (2, 10)
    shapes: tuple[str, ...] = SHAPES
    noise_sigma: float = 0.004
    extent: tuple[float, float, float] = (1.0, 1.0, 1.0)
    size_range: tuple[float, float] = (0.06, 0.11)
    gap: float = 0.15
    allow_overlap: bool = False
    max_retries: int = 2000
    min_points: int = 24

    def __post_init__(self):
        if isinstance(self.extent, (int, float)):
            self.extent = (float(self.extent),) * 3
        self.extent = tuple(float(e) for e in self.extent)
        self.instances_range = tuple(int(v) for v in self.instances_range)
        self.shapes = tuple(self.shapes)
        lo, hi = self.instances_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid instances_range {self.instances_range}")
        if unknown := set(self.shapes) - set(SHAPES):
            raise ValueError(f"unknown shapes {sorted(unknown)}")
        if self.n_points < self.min_points * hi:
            raise ValueError("n_points too small for the requested instance count")

    def to_dict(self) -> dict:
        return asdict(self)


class PlacementError(RuntimeError):
    pass


@dataclass
class _Primitive:
    kind: str
    center: np.ndarray
    params: np.ndarray
    radius: float  # bounding-sphere radius used for placement
    area: float = field(default=0.0)


def _make_primitive(kind: str, r: float, rng: np.random.Generator) -> _Primitive:
    if kind == "sphere":
        return _Primitive(kind, np.zeros(3), np.array([r]), r, 4 * np.pi * r * r)
    if kind == "box":
        h = rng.uniform(0.5, 1.0, 3) * r * 0.8
        area = 8 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
        return _Primitive(kind, np.zeros(3), h, float(np.linalg.norm(h)), area)
    # plane: a rectangular patch perpendicular to one axis
    axis = rng.integers(3)
    ab = rng.uniform(0.6, 1.0, 2) * r
    return _Primitive(kind, np.zeros(3), np.array([axis, ab[0], ab[1]]), float(np.linalg.norm(ab)), 4 * ab[0] * ab[1])


def _surface_points(p: _Primitive, n: int, rng: np.random.Generator) -> np.ndarray:
    if p.kind == "sphere":
        v = rng.normal(size=(n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True) * p.params[0]
    if p.kind == "box":
        h = p.params
        face_area = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]] * 2)
        faces = rng.choice(6, size=n, p=face_area / face_area.sum())
        pts = rng.uniform(-1.0, 1.0, (n, 3)) * h
        axis = faces % 3
        sign = np.where(faces < 3, 1.0, -1.0)
        pts[np.arange(n), axis] = sign * h[axis]
        return pts
    axis, a, b = int(p.params[0]), p.params[1], p.params[2]
    pts = np.zeros((n, 3))
    others = [ax for ax in range(3) if ax != axis]
    pts[:, others[0]] = rng.uniform(-a, a, n)
    pts[:, others[1]] = rng.uniform(-b, b, n)
    return pts


def _split_budget(areas: np.ndarray, total: int, floor: int) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``areas`` with a per-item floor."""
    spare = total - floor * len(areas)
    share = areas / areas.sum() * spare
    counts = np.floor(share).astype(int)
    rest = spare - counts.sum()
    counts[np.argsort(-(share - counts), kind="stable")[:rest]] += 1
    return counts + floor


def generate_scene(cfg: SynthConfig, scene_index: int) -> PointCloud:
    """Deterministic scene of separated primitives; labels are per-primitive."""
    rng = np.random.default_rng([cfg.seed, scene_index])
    lo, hi = cfg.instances_range
    n_inst = int(rng.integers(lo, hi + 1))
    extent = np.array(cfg.extent)
    prims: list[_Primitive] = []
    for _ in range(n_inst):
        kind = str(rng.choice(cfg.shapes))
        prim = _make_primitive(kind, rng.uniform(*cfg.size_range), rng)
        for _attempt in range(cfg.max_retries):
            c = rng.uniform(prim.radius, extent - prim.radius)
            if cfg.allow_overlap or all(
                np.linalg.norm(c - q.center) >= prim.radius + q.radius + cfg.gap for q in prims
            ):
                prim.center = c
                break
        else:
            raise PlacementError(
                f"could not place {n_inst} primitives without overlap in scene {scene_index}")
        prims.append(prim)

    counts = _split_budget(np.array([p.area for p in prims]), cfg.n_points, cfg.min_points)
    xyz, inst, sem = [], [], []
    for i, (p, c) in enumerate(zip(prims, counts)):
        pts = _surface_points(p, int(c), rng) + p.center + rng.normal(0.0, cfg.noise_sigma, (c, 3))
        xyz.append(pts)
        inst.append(np.full(c, i))
        sem.append(np.full(c, SHAPES.index(p.kind)))
    order = rng.permutation(cfg.n_points)
    data = np.concatenate(xyz)[order].astype(np.float32).astype(np.float64)
    return PointCloud(data, np.concatenate(inst)[order], np.concatenate(sem)[order])


def write_dataset(cfg: SynthConfig, count: int, out_dir: str | Path, start: int = 0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(start, start + count):
        path = out / f"scene_{k:05d}.pcl"
        write_cloud(generate_scene(cfg, k), path)
        paths.append(path)
    manifest = {"seed": cfg.seed, "count": count, "start": start, "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return paths


def load_dataset(data_dir: str | Path) -> list[tuple[str, PointCloud]]:
    paths = sorted(Path(data_dir).glob("*.pcl"))
    return [(p.stem, read_cloud(p)) for p in paths]


# -- blocks ----------------------------------------------------------------

@dataclass
class BlockLayout:
    size: float
    stride: float
    origins: list[tuple[float, float]]
    blocks: list[np.ndarray]  # point indices into the room cloud

    def __len__(self) -> int:
        return len(self.blocks)


def room_location(room: PointCloud) -> np.ndarray:
    """Each point's XYZ normalised to [0, 1] over the room's bounding box."""
    xyz = room.xyz
    lo = xyz.min(axis=0)
    span = np.maximum(xyz.max(axis=0) - lo, 1e-9)
    return (xyz - lo) / span


def with_room_location(room: PointCloud) -> PointCloud:
    return PointCloud(np.hstack([room.data, room_location(room)]), room.instance_labels, room.semantic_labels)


def _grid_starts(lo: float, hi: float, size: float, stride: float) -> np.ndarray:
    n = max(1, int(np.ceil((hi - lo - size) / stride - 1e-9)) + 1)
    return lo + stride * np.arange(n)


def slice_blocks(room: PointCloud, size: float = 1.0, stride: float = 0.5, n_sample: int | None = None,
                 rng: np.random.Generator | None = None) -> tuple[BlockLayout, list[PointCloud]]:
    """Cut a room into overlapping XY blocks.

    With ``n_sample`` set (training), each block is resampled to exactly that
    many points, with replacement when it holds fewer. Block clouds carry the
    room's channels plus the normalised room location.
    """
    full = with_room_location(room)
    xy = room.xyz[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    eps = 1e-9
    origins, blocks, clouds = [], [], []
    for y0 in _grid_starts(lo[1], hi[1], size, stride):
        for x0 in _grid_starts(lo[0], hi[0], size, stride):
            inside = ((xy[:, 0] >= x0 - eps) & (xy[:, 0] <= x0 + size + eps)
                      & (xy[:, 1] >= y0 - eps) & (xy[:, 1] <= y0 + size + eps))
            idx = np.flatnonzero(inside)
            if idx.size == 0:
                continue
            if n_sample is not None:
                rng = rng if rng is not None else np.random.default_rng(0)
                idx = np.sort(rng.choice(idx, n_sample, replace=idx.size < n_sample))
            origins.append((float(x0), float(y0)))
            blocks.append(idx)
            clouds.append(full.subset(idx))
    return BlockLayout(size, stride, origins, blocks), clouds

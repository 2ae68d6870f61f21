"""Skeleton sequence datasets: file I/O, preprocessing, splits, synthesis.

Dataset text format (JSONL): an optional first line
``{"meta": {"topology": ..., "classes": {...}, "key_joint_truth": {...}}}``
followed by one record per line with fields ``{id, label, frames}``,
frames being a T x V x 3 nested array. A binary companion format
(``.bin``) round-trips losslessly with the text form.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .topology import SkeletonTopology

_BIN_MAGIC = b"CGSK"


@dataclass
class SkeletonSequence:
    """One skeleton clip: frames is a (T, V, 3) float64 array in meters."""

    id: str
    label: int
    frames: np.ndarray
    topology_name: str = "ntu25"
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class Dataset:
    sequences: list[SkeletonSequence]
    class_names: dict[int, str]
    key_joint_truth: dict[int, np.ndarray] | None = None
    topology_name: str = "ntu25"

    def __len__(self) -> int:
        return len(self.sequences)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)


def _validate_sequence(seq: SkeletonSequence, topology: SkeletonTopology, where: str) -> None:
    f = seq.frames
    if f.ndim != 3 or f.shape[1] != topology.n_joints or f.shape[2] != 3:
        raise DataFormatError(
            f"{where}: frames shape {f.shape} does not match (T, {topology.n_joints}, 3)"
        )
    if f.shape[0] < 1:
        raise DataFormatError(f"{where}: sequence has no frames")
    if not np.isfinite(f).all():
        raise DataFormatError(f"{where}: non-finite coordinate")


def load_dataset(path: str | Path, topology: SkeletonTopology) -> Dataset:
    """Load a JSONL dataset and validate every record against the topology.

    Malformed records raise DataFormatError naming the record index.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"dataset file not found: {path}")
    class_names: dict[int, str] = {}
    truth: dict[int, np.ndarray] | None = None
    have_meta = False
    sequences: list[SkeletonSequence] = []
    with path.open() as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"record {i}: invalid JSON ({e})") from None
            if "meta" in rec:
                m = rec["meta"]
                if m.get("topology", topology.name) != topology.name:
                    raise DataFormatError(
                        f"record {i}: dataset topology {m['topology']!r} != {topology.name!r}"
                    )
                class_names = {int(k): str(v) for k, v in m.get("classes", {}).items()}
                have_meta = bool(class_names)
                if "key_joint_truth" in m:
                    truth = {
                        int(k): np.asarray(v, dtype=np.float64)
                        for k, v in m["key_joint_truth"].items()
                    }
                continue
            missing = {"id", "label", "frames"} - rec.keys()
            if missing:
                raise DataFormatError(f"record {i}: missing fields {sorted(missing)}")
            label = int(rec["label"])
            if have_meta and label not in class_names:
                raise DataFormatError(f"record {i}: unknown label {label}")
            frames = np.asarray(rec["frames"], dtype=np.float64)
            seq = SkeletonSequence(
                id=str(rec["id"]), label=label, frames=frames, topology_name=topology.name
            )
            _validate_sequence(seq, topology, f"record {i} (id={seq.id!r})")
            sequences.append(seq)
    if not have_meta:
        class_names = {int(s.label): f"class_{s.label}" for s in sequences}
    return Dataset(
        sequences=sequences,
        class_names=class_names,
        key_joint_truth=truth,
        topology_name=topology.name,
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the JSONL text form (meta line first, then one record per line)."""
    path = Path(path)
    meta: dict = {
        "topology": dataset.topology_name,
        "classes": {str(k): v for k, v in sorted(dataset.class_names.items())},
    }
    if dataset.key_joint_truth is not None:
        meta["key_joint_truth"] = {
            str(k): [float(x) for x in v] for k, v in sorted(dataset.key_joint_truth.items())
        }
    with path.open("w") as fh:
        fh.write(json.dumps({"meta": meta}) + "\n")
        for s in dataset.sequences:
            rec = {"id": s.id, "label": int(s.label), "frames": s.frames.tolist()}
            fh.write(json.dumps(rec) + "\n")


def save_dataset_binary(dataset: Dataset, path: str | Path) -> None:
    """Binary companion: magic, JSON header, then little-endian float64 frames."""
    path = Path(path)
    header = {
        "topology": dataset.topology_name,
        "classes": {str(k): v for k, v in sorted(dataset.class_names.items())},
        "records": [
            {"id": s.id, "label": int(s.label), "t": int(s.frames.shape[0]), "v": int(s.frames.shape[1])}
            for s in dataset.sequences
        ],
    }
    if dataset.key_joint_truth is not None:
        header["key_joint_truth"] = {
            str(k): [float(x) for x in v] for k, v in sorted(dataset.key_joint_truth.items())
        }
    blob = json.dumps(header).encode()
    with path.open("wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for s in dataset.sequences:
            fh.write(np.ascontiguousarray(s.frames, dtype="<f8").tobytes())


def load_dataset_binary(path: str | Path, topology: SkeletonTopology) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _BIN_MAGIC:
        raise DataFormatError(f"{path}: not a binary skeleton dataset")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode())
    if header.get("topology", topology.name) != topology.name:
        raise DataFormatError(f"{path}: topology mismatch")
    offset = 8 + hlen
    sequences = []
    for i, rec in enumerate(header["records"]):
        t, v = int(rec["t"]), int(rec["v"])
        n = t * v * 3 * 8
        frames = np.frombuffer(raw[offset : offset + n], dtype="<f8").reshape(t, v, 3)
        offset += n
        seq = SkeletonSequence(
            id=str(rec["id"]),
            label=int(rec["label"]),
            frames=frames.astype(np.float64),
            topology_name=topology.name,
        )
        _validate_sequence(seq, topology, f"record {i}")
        sequences.append(seq)
    truth = None
    if "key_joint_truth" in header:
        truth = {int(k): np.asarray(x, dtype=np.float64) for k, x in header["key_joint_truth"].items()}
    class_names = {int(k): str(v) for k, v in header.get("classes", {}).items()}
    if not class_names:
        class_names = {int(s.label): f"class_{s.label}" for s in sequences}
    return Dataset(sequences, class_names, truth, topology.name)


def normalize_sequence(seq: SkeletonSequence, topology: SkeletonTopology) -> SkeletonSequence:
    """Center on the root joint of frame 0 and divide by its mean bone length.

    All-zero bone lengths mark the result degenerate (translation only,
    flagged in meta). The scheme is a conventional choice; nothing in the
    model depends on its details beyond translation invariance.
    """
    frames = seq.frames.astype(np.float64)
    offset = frames[0, 0, :].copy()
    frames = frames - offset
    first = frames[0]
    if topology.edges:
        lengths = np.array([np.linalg.norm(first[a] - first[b]) for a, b in topology.edges])
        scale = float(lengths.mean())
    else:
        scale = 0.0
    meta = dict(seq.meta)
    if scale > 0.0:
        frames = frames / scale
    else:
        meta["degenerate"] = True
    return replace(seq, frames=frames, meta=meta)


def resample_time(seq: SkeletonSequence, t_out: int) -> SkeletonSequence:
    """Evenly resample to t_out frames, picking index floor(i*T/t_out)."""
    if t_out < 1:
        raise DataFormatError(f"t_out must be >= 1, got {t_out}")
    t_in = seq.frames.shape[0]
    idx = (np.arange(t_out) * t_in) // t_out
    return replace(seq, frames=seq.frames[idx].copy())


def split_base_novel(dataset: Dataset, base_classes: list[int]) -> tuple[Dataset, Dataset]:
    """Partition by label into (base, novel); base_classes must all exist."""
    present = set(int(s.label) for s in dataset.sequences) | set(dataset.class_names)
    base_set = set(int(c) for c in base_classes)
    missing = base_set - present
    if missing:
        raise DataFormatError(f"base classes not present in dataset: {sorted(missing)}")

    def subset(keep: set[int]) -> Dataset:
        seqs = [s for s in dataset.sequences if int(s.label) in keep]
        names = {k: v for k, v in dataset.class_names.items() if k in keep}
        truth = None
        if dataset.key_joint_truth is not None:
            truth = {k: v for k, v in dataset.key_joint_truth.items() if k in keep}
        return Dataset(seqs, names, truth, dataset.topology_name)

    novel_set = present - base_set
    return subset(base_set), subset(novel_set)


@dataclass(frozen=True)
class SyntheticSpec:
    """Controls the synthetic generator.

    Each class gets a distinct subset of joints_per_class "informative"
    joints that swing on class-specific sinusoids; every other joint
    holds the shared rest pose plus iid noise of scale `noise`.
    """

    n_classes: int = 10
    samples_per_class: int = 20
    n_frames: int = 60
    joints_per_class: int = 4
    amplitude: float = 0.5
    noise: float = 0.02

    def validate(self, n_joints: int) -> None:
        if self.n_classes < 1 or self.samples_per_class < 1 or self.n_frames < 1:
            raise DataFormatError("n_classes, samples_per_class and n_frames must be >= 1")
        if not 1 <= self.joints_per_class <= n_joints:
            raise DataFormatError(f"joints_per_class must be in [1, {n_joints}]")
        available = math.comb(n_joints, self.joints_per_class)
        if self.n_classes > available:
            raise DataFormatError(
                f"n_classes={self.n_classes} exceeds the {available} distinct "
                f"joint subsets of size {self.joints_per_class}"
            )


def generate_synthetic(
    spec: SyntheticSpec, seed: int, topology: SkeletonTopology
) -> Dataset:
    """Deterministic synthetic dataset with known informative joints.

    The same (spec, seed) always produces the same dataset bit for bit.
    key_joint_truth holds the binary informative-joint vector per class.
    """
    v = topology.n_joints
    spec.validate(v)
    rng = np.random.default_rng(seed)

    rest_pose = rng.uniform(-0.5, 0.5, size=(v, 3))
    subsets: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(subsets) < spec.n_classes:
        cand = tuple(sorted(rng.choice(v, size=spec.joints_per_class, replace=False).tolist()))
        if cand not in seen:
            seen.add(cand)
            subsets.append(cand)

    t_axis = np.arange(spec.n_frames, dtype=np.float64) / spec.n_frames
    sequences: list[SkeletonSequence] = []
    class_names: dict[int, str] = {}
    truth: dict[int, np.ndarray] = {}
    for c, joints in enumerate(subsets):
        class_names[c] = f"motion pattern {c:02d}"
        k = np.zeros(v)
        k[list(joints)] = 1.0
        truth[c] = k
        freq = float(rng.integers(1, 4))
        directions = rng.normal(size=(len(joints), 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        joint_phase = rng.uniform(0.0, 2 * np.pi, size=len(joints))
        for s in range(spec.samples_per_class):
            phase = rng.uniform(0.0, 2 * np.pi)
            amp = spec.amplitude * rng.uniform(0.8, 1.2)
            frames = np.tile(rest_pose, (spec.n_frames, 1, 1))
            wave = np.sin(2 * np.pi * freq * t_axis[:, None] + phase + joint_phase[None, :])
            frames[:, list(joints), :] += amp * wave[:, :, None] * directions[None, :, :]
            if spec.noise > 0:
                frames += rng.normal(0.0, spec.noise, size=frames.shape)
            sequences.append(
                SkeletonSequence(
                    id=f"synth_{c:03d}_{s:03d}",
                    label=c,
                    frames=frames,
                    topology_name=topology.name,
                )
            )
    return Dataset(sequences, class_names, truth, topology.name)


def preprocess(
    dataset: Dataset, topology: SkeletonTopology, t_out: int
) -> tuple[np.ndarray, np.ndarray]:
    """Normalize + resample every sequence; returns (X (N,T,V,3), y (N,))."""
    xs = []
    for s in dataset.sequences:
        s = normalize_sequence(s, topology)
        s = resample_time(s, t_out)
        xs.append(s.frames)
    if not xs:
        return np.zeros((0, t_out, topology.n_joints, 3)), np.zeros(0, dtype=np.int64)
    return np.stack(xs), dataset.labels()

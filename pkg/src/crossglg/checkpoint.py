"""Checkpoint directory format: manifest.json + params.bin.

The manifest lists tensor names, shapes, dtype and byte offsets (sorted
by name), plus the serialized config and training metadata; params.bin
is the concatenation of the tensors as little-endian float32 in
manifest order. Checkpoint tensors are float32, so save -> load is
bit-exact; compute paths upcast to float64 on use.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig
from .errors import CheckpointError
from .interaction import InteractionConfig
from .model import ModelConfig

_FORMAT = "crossglg-checkpoint-v1"


def config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(raw: dict) -> ModelConfig:
    enc = EncoderConfig(**raw["encoder"])
    inter = InteractionConfig(**raw["interaction"])
    rest = {k: v for k, v in raw.items() if k not in ("encoder", "interaction")}
    return ModelConfig(encoder=enc, interaction=inter, **rest).validate()


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]  # float32
    metadata: dict

    @classmethod
    def from_params(cls, config: ModelConfig, params: dict[str, np.ndarray],
                    metadata: dict) -> "ModelCheckpoint":
        tensors = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in params.items()}
        return cls(config=config, tensors=tensors, metadata=dict(metadata))

    def to_params(self) -> dict[str, np.ndarray]:
        return {k: v.astype(np.float64) for k, v in self.tensors.items()}

    @property
    def frozen(self) -> bool:
        return bool(self.metadata.get("frozen", False))

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        offset = 0
        blob = bytearray()
        for name in sorted(self.tensors):
            t = self.tensors[name]
            raw = np.ascontiguousarray(t, dtype="<f4").tobytes()
            entries.append(
                {"name": name, "shape": list(t.shape), "dtype": "<f4", "offset": offset}
            )
            blob.extend(raw)
            offset += len(raw)
        manifest = {
            "format": _FORMAT,
            "config": config_to_dict(self.config),
            "metadata": self.metadata,
            "tensors": entries,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        (directory / "params.bin").write_bytes(bytes(blob))

    @classmethod
    def load(cls, directory: str | Path) -> "ModelCheckpoint":
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise CheckpointError(f"no checkpoint at {directory} (manifest.json missing)")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format") != _FORMAT:
            raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
        raw = (directory / "params.bin").read_bytes()
        tensors: dict[str, np.ndarray] = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            start = entry["offset"]
            arr = np.frombuffer(raw[start : start + 4 * count], dtype="<f4")
            if arr.size != count:
                raise CheckpointError(f"tensor {entry['name']!r} truncated in params.bin")
            tensors[entry["name"]] = arr.reshape(shape).copy()
        if not np.all([np.isfinite(t).all() for t in tensors.values()]):
            raise CheckpointError("checkpoint contains non-finite values")
        return cls(
            config=config_from_dict(manifest["config"]),
            tensors=tensors,
            metadata=manifest.get("metadata", {}),
        )

"""Action description handling: prompts, ingestion, key joints, embeddings.

Descriptions are produced offline (by a language model or by hand) and
ingested from JSONL; nothing in this package calls an LLM. Key joints
are recovered from the global description with a deterministic
body-part lexicon matcher, replacing a full noun-phrase extractor.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DescriptionError, ExtractionError
from .topology import SkeletonTopology

GLOBAL_PROMPT_TEMPLATE = (
    "Please describe, in one sentence and from a global point of view, "
    "which joints and body parts of the human body are engaged and how "
    "they move when a person performs the action [action name]."
)

JOINT_PROMPT_TEMPLATE = (
    "A person performs the action [action name]. For each of the following "
    "skeleton joints, describe in one sentence how that joint moves during "
    "the action: [joint-list]."
)

# irregular plural -> singular; regular plurals just drop a trailing 's'
_IRREGULAR_SINGULAR = {"feet": "foot", "teeth": "tooth", "torsos": "torso"}


@dataclass
class ActionDescription:
    """Global action text plus one motion description per topology joint."""

    action_name: str
    global_text: str
    joint_texts: dict[str, str]


@dataclass
class KeyJointDistribution:
    """Binary key-joint vector and its L1-normalized form."""

    K: np.ndarray
    k_gt: np.ndarray

    @classmethod
    def from_binary(cls, k: np.ndarray) -> "KeyJointDistribution":
        k = np.asarray(k, dtype=np.float64)
        total = k.sum()
        if total <= 0:
            raise ExtractionError("key-joint vector has no active joints")
        return cls(K=k, k_gt=k / total)


@dataclass
class JointTextEmbeddings:
    """Per-joint text features, rows in topology joint order."""

    t: np.ndarray  # (V, C_txt)
    embedder_id: str


def render_prompts(action_name: str, topology: SkeletonTopology) -> tuple[str, str]:
    """Fill the two prompt templates for one action. Pure string work."""
    if not action_name.strip():
        raise DescriptionError("action name must be non-empty")
    joint_list = ", ".join(topology.joint_names)
    global_prompt = GLOBAL_PROMPT_TEMPLATE.replace("[action name]", action_name)
    joint_prompt = JOINT_PROMPT_TEMPLATE.replace("[action name]", action_name).replace(
        "[joint-list]", joint_list
    )
    return global_prompt, joint_prompt


def ingest_descriptions(
    path: str | Path, topology: SkeletonTopology
) -> list[ActionDescription]:
    """Read a JSONL description file and validate full joint coverage.

    Joint keys are matched case-insensitively against the topology; a
    missing, unknown, duplicate or empty entry fails with the joint name.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"description file not found: {path}")
    out: list[ActionDescription] = []
    known = {n: n for n in topology.joint_names}
    with path.open() as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"record {i}: invalid JSON ({e})") from None
            action = str(rec.get("action", "")).strip()
            if not action:
                raise DescriptionError(f"record {i}: missing action name")
            global_text = str(rec.get("global", "")).strip()
            if not global_text:
                raise DescriptionError(f"record {i} ({action!r}): empty global text")
            joints: dict[str, str] = {}
            for key, text in rec.get("joints", {}).items():
                norm = str(key).strip().lower()
                if norm not in known:
                    raise DescriptionError(f"record {i} ({action!r}): unknown joint {key!r}")
                if norm in joints:
                    raise DescriptionError(f"record {i} ({action!r}): duplicate joint {key!r}")
                if not str(text).strip():
                    raise DescriptionError(f"record {i} ({action!r}): empty text for {key!r}")
                joints[norm] = str(text).strip()
            missing = [n for n in topology.joint_names if n not in joints]
            if missing:
                raise DescriptionError(
                    f"record {i} ({action!r}): missing joint entry {missing[0]!r}"
                )
            out.append(ActionDescription(action, global_text, joints))
    return out


def _singular(token: str) -> str:
    if token in _IRREGULAR_SINGULAR:
        return _IRREGULAR_SINGULAR[token]
    if token.endswith("s") and not token.endswith("ss") and len(token) > 3:
        return token[:-1]
    return token


def _tokenize(text: str) -> list[str]:
    return [_singular(t) for t in re.findall(r"[a-z]+", text.lower())]


def extract_key_joints(
    desc: ActionDescription, topology: SkeletonTopology
) -> KeyJointDistribution:
    """Scan the global description for body-part terms and map to joints.

    Matching is case-insensitive, word-boundary, plural-tolerant and
    longest-phrase-first, so "tip of left hand" wins over "hand". Terms
    without a side ("arm") activate both sides via the lexicon.
    """
    terms = {tuple(t.split()): idxs for t, idxs in topology.part_map.items()}
    max_len = max(len(t) for t in terms)
    tokens = _tokenize(desc.global_text)
    k = np.zeros(topology.n_joints)
    i = 0
    while i < len(tokens):
        for length in range(min(max_len, len(tokens) - i), 0, -1):
            phrase = tuple(tokens[i : i + length])
            if phrase in terms:
                k[list(terms[phrase])] = 1.0
                i += length
                break
        else:
            i += 1
    if k.sum() == 0:
        raise ExtractionError(
            f"no key joints found in global description of {desc.action_name!r}"
        )
    return KeyJointDistribution.from_binary(k)


class HashingEmbedder:
    """Deterministic bag-of-hashed-words text embedder.

    Tokens (runs of letters in the lowercased text) are hashed with the
    first 8 bytes of their MD5 digest, interpreted big-endian, modulo the
    dimension; counts are accumulated and L2-normalized. No randomness,
    no state: equal text gives bitwise-equal vectors on any platform.
    """

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise DataFormatError(f"embedder dimension must be >= 1, got {dim}")
        self.dim = dim
        self.id = f"hash-{dim}"

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in re.findall(r"[a-z]+", text.lower()):
            digest = hashlib.md5(token.encode()).digest()
            bucket = int.from_bytes(digest[:8], "big") % self.dim
            vec[bucket] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


def default_text_embedder(text: str, c_txt: int) -> np.ndarray:
    """Functional form of HashingEmbedder for one-off calls."""
    return HashingEmbedder(c_txt)(text)


def get_embedder(spec: str) -> HashingEmbedder:
    """Resolve an embedder spec like "hash:64" to an embedder instance."""
    name, _, dim = spec.partition(":")
    if name != "hash":
        raise DataFormatError(f"unknown embedder {spec!r} (only 'hash:<dim>' is built in)")
    return HashingEmbedder(int(dim) if dim else 64)


def embed_joint_texts(
    desc: ActionDescription, embedder, topology: SkeletonTopology
) -> JointTextEmbeddings:
    """Embed each joint's text; row j corresponds to topology joint j."""
    rows = []
    for name in topology.joint_names:
        try:
            rows.append(np.asarray(embedder(desc.joint_texts[name]), dtype=np.float64))
        except Exception as e:
            raise DataFormatError(
                f"embedder failed on joint {name!r} of {desc.action_name!r}: {e}"
            ) from e
    t = np.stack(rows)
    if not np.isfinite(t).all():
        raise DataFormatError(f"non-finite embedding for {desc.action_name!r}")
    return JointTextEmbeddings(t=t, embedder_id=getattr(embedder, "id", "custom"))


def export_embeddings(emb: JointTextEmbeddings, action: str, manifest_path: str | Path,
                      topology: SkeletonTopology) -> None:
    """Write manifest JSON plus a row-major little-endian float32 blob."""
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    v, c_txt = emb.t.shape
    manifest = {
        "action": action,
        "joints_order": list(topology.joint_names),
        "c_txt": int(c_txt),
        "blob": blob_path.name,
        "embedder_id": emb.embedder_id,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1))
    blob_path.write_bytes(np.ascontiguousarray(emb.t, dtype="<f4").tobytes())


def load_external_embeddings(
    manifest_path: str | Path, topology: SkeletonTopology
) -> JointTextEmbeddings:
    """Load one action's per-joint embedding matrix from manifest + blob."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataFormatError(f"embedding manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    order = [str(n).strip().lower() for n in manifest["joints_order"]]
    if len(order) != topology.n_joints or set(order) != set(topology.joint_names):
        raise DataFormatError(
            f"{manifest_path}: joints_order does not cover the {topology.n_joints} "
            f"joints of {topology.name!r}"
        )
    c_txt = int(manifest["c_txt"])
    blob_path = manifest_path.parent / manifest["blob"]
    raw = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    if raw.size != len(order) * c_txt:
        raise DataFormatError(
            f"{blob_path}: expected {len(order) * c_txt} floats, found {raw.size}"
        )
    rows = raw.reshape(len(order), c_txt).astype(np.float64)
    # reorder to topology order
    perm = [order.index(n) for n in topology.joint_names]
    return JointTextEmbeddings(t=rows[perm], embedder_id="external")


def save_key_joints(records: dict[str, KeyJointDistribution], path: str | Path) -> None:
    """One JSONL record per action: {action, K, k_gt}."""
    with Path(path).open("w") as fh:
        for action, dist in records.items():
            rec = {
                "action": action,
                "K": [int(x) for x in dist.K],
                "k_gt": [float(x) for x in dist.k_gt],
            }
            fh.write(json.dumps(rec) + "\n")


def load_key_joints(path: str | Path, topology: SkeletonTopology) -> dict[str, KeyJointDistribution]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"key-joint file not found: {path}")
    out: dict[str, KeyJointDistribution] = {}
    with path.open() as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            k = np.asarray(rec["K"], dtype=np.float64)
            if k.shape != (topology.n_joints,):
                raise DataFormatError(f"record {i}: K has wrong length {k.shape}")
            out[str(rec["action"])] = KeyJointDistribution.from_binary(k)
    return out


def synthetic_descriptions(
    class_names: dict[int, str],
    key_joint_truth: dict[int, np.ndarray],
    topology: SkeletonTopology,
) -> list[ActionDescription]:
    """Manufacture descriptions for synthetic classes from their truth vectors."""
    out = []
    for label in sorted(class_names):
        informative = [
            topology.joint_names[j]
            for j in range(topology.n_joints)
            if key_joint_truth[label][j] > 0
        ]
        global_text = (
            "the " + ", ".join(informative) + " swing along wide periodic arcs "
            "while every other joint holds still"
        )
        joints = {}
        for name in topology.joint_names:
            if name in informative:
                joints[name] = (
                    f"The {name} traces a large rhythmic arc, repeating the same "
                    "pattern for the whole clip."
                )
            else:
                joints[name] = f"The {name} stays almost motionless apart from slight jitter."
        out.append(ActionDescription(class_names[label], global_text, joints))
    return out

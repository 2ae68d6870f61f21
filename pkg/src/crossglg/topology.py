"""Skeleton topologies: joint naming/order, edges, body-part lexicon.

A topology fixes the joint layout (V joints) that sequences, text
descriptions and the encoder all agree on. The 25-joint "ntu25" layout
ships as package data; additional layouts can be loaded from JSON files
with the same schema.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import TopologyError

BUILTIN_TOPOLOGIES = ("ntu25",)


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint names (ordered), skeleton edges and the body-part lexicon.

    part_map maps a lowercase body-part term to the joint indices it
    activates; every joint name is itself a term mapping to (at least)
    its own index.
    """

    name: str
    joint_names: tuple[str, ...]
    part_map: dict[str, tuple[int, ...]] = field(repr=False)
    edges: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def index_of(self, joint_name: str) -> int:
        """Index of a joint by (case-insensitive) name."""
        try:
            return self.joint_names.index(joint_name.strip().lower())
        except ValueError:
            raise TopologyError(
                f"joint {joint_name!r} not in topology {self.name!r}"
            ) from None


def _validate(topo: SkeletonTopology) -> SkeletonTopology:
    v = topo.n_joints
    if len(set(topo.joint_names)) != v:
        raise TopologyError(f"topology {topo.name!r} has duplicate joint names")
    for term, idxs in topo.part_map.items():
        for i in idxs:
            if not 0 <= i < v:
                raise TopologyError(f"part term {term!r} maps to out-of-range index {i}")
    for a, b in topo.edges:
        if not (0 <= a < v and 0 <= b < v):
            raise TopologyError(f"edge ({a}, {b}) out of range for V={v}")
    for j, name in enumerate(topo.joint_names):
        if j not in topo.part_map.get(name, ()):
            raise TopologyError(f"joint name {name!r} does not map to itself in part_map")
    return topo


def _from_dict(raw: dict) -> SkeletonTopology:
    names = tuple(str(n).strip().lower() for n in raw["joint_names"])
    index = {n: i for i, n in enumerate(names)}
    part_map: dict[str, tuple[int, ...]] = {}
    for term, members in raw.get("part_map", {}).items():
        idxs = []
        for m in members:
            if m not in index:
                raise TopologyError(f"part term {term!r} references unknown joint {m!r}")
            idxs.append(index[m])
        part_map[str(term).strip().lower()] = tuple(sorted(set(idxs)))
    # every joint name is a term for itself
    for n, i in index.items():
        existing = set(part_map.get(n, ()))
        existing.add(i)
        part_map[n] = tuple(sorted(existing))
    edges = tuple((int(a), int(b)) for a, b in raw.get("edges", []))
    return _validate(
        SkeletonTopology(name=str(raw["name"]), joint_names=names, part_map=part_map, edges=edges)
    )


def load_topology(name: str) -> SkeletonTopology:
    """Load a registered topology by name, or any topology from a JSON path."""
    if name in BUILTIN_TOPOLOGIES:
        text = resources.files("crossglg.data").joinpath(f"{name}.json").read_text()
        return _from_dict(json.loads(text))
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return _from_dict(json.loads(path.read_text()))
    raise TopologyError(
        f"unknown topology {name!r} (built in: {', '.join(BUILTIN_TOPOLOGIES)}; "
        "or pass a path to a .json definition)"
    )

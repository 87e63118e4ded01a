"""Generalization hierarchies and the Laplace mechanism."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


@dataclass(frozen=True)
class NumericClass:
    unit: str
    precision: int
    sensitivity: float
    nonnegative: bool = True


class CategoryTree:
    """One entity class: nodes with parents, leaf counts, and a root."""

    def __init__(self, root: str, tree: dict):
        self.root = root
        self.parent: dict[str, Optional[str]] = {root: None}
        self.children: dict[str, list[str]] = {root: []}
        self.leaf_count: dict[str, int] = {}
        self._depth: dict[str, int] = {root: 0}
        self._add(root, tree)
        self._key = {n.lower(): n for n in self.parent}
        self._population = {}
        for n in self.parent:
            self._population[n] = self._pop(n)

    def _add(self, parent: str, subtree: dict) -> None:
        for name, val in subtree.items():
            if name in self.parent:
                raise ValueError(f"duplicate hierarchy node {name!r}")
            self.parent[name] = parent
            self.children[parent].append(name)
            self.children[name] = []
            self._depth[name] = self._depth[parent] + 1
            if isinstance(val, dict):
                self._add(name, val)
            else:
                if int(val) < 0:
                    raise ValueError(f"negative leaf count for {name!r}")
                self.leaf_count[name] = int(val)

    def _pop(self, node: str) -> int:
        if node in self.leaf_count:
            return self.leaf_count[node]
        return sum(self._pop(c) for c in self.children[node])

    def find(self, value: str) -> Optional[str]:
        return self._key.get(value.strip().lower())

    def population(self, node: str) -> int:
        return self._population[node]

    def depth(self, node: str) -> int:
        return self._depth[node]

    def ancestors(self, node: str) -> list[str]:
        """Strict ancestors from nearest to root."""
        out = []
        p = self.parent[node]
        while p is not None:
            out.append(p)
            p = self.parent[p]
        return out

    def nodes(self) -> list[str]:
        return list(self.parent)

    def leaves(self) -> list[str]:
        return list(self.leaf_count)


@dataclass
class Generalization:
    text: str
    node: Optional[str] = None
    population: int = 0
    flags: list[str] = field(default_factory=list)


class GeneralizationHierarchy:
    def __init__(self, categorical: dict[str, CategoryTree], numeric: dict[str, NumericClass]):
        self.categorical = categorical
        self.numeric = numeric

    @classmethod
    def from_dict(cls, d: dict) -> "GeneralizationHierarchy":
        cats = {etype: CategoryTree(spec["root"], spec["tree"]) for etype, spec in d.get("categorical", {}).items()}
        nums = {
            unit: NumericClass(unit, int(s.get("precision", 0)), float(s.get("sensitivity", 1.0)), bool(s.get("nonnegative", True)))
            for unit, s in d.get("numeric", {}).items()
        }
        return cls(cats, nums)

    @classmethod
    def load(cls, path: str | Path) -> "GeneralizationHierarchy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def generalize_category(self, etype: str, value: str, k: int) -> Generalization:
        """Nearest strict ancestor of ``value`` whose leaf population is >= k.

        Values absent from the hierarchy go straight to the root. If even the
        root is below k the root is still used and the event is flagged.
        """
        tree = self.categorical[etype]
        node = tree.find(value)
        if node is None:
            return Generalization(tree.root, tree.root, tree.population(tree.root), ["not_in_hierarchy"])
        for anc in tree.ancestors(node):
            if tree.population(anc) >= k:
                flags = ["suppressed_to_root"] if anc == tree.root else []
                return Generalization(anc, anc, tree.population(anc), flags)
        return Generalization(tree.root, tree.root, tree.population(tree.root), ["k_unsatisfied"])


# --------------------------------------------------------------------------- Laplace


def laplace_noise(u: float, scale: float) -> float:
    """Inverse-CDF Laplace sample for a uniform draw ``u`` in (0, 1)."""
    if scale == 0 or u == 0.5:
        return 0.0
    d = u - 0.5
    return -scale * math.copysign(1.0, d) * math.log(1.0 - 2.0 * abs(d))


def sample_laplace(rng: random.Random, scale: float) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return laplace_noise(u, scale)


def laplace_scale(sensitivity: float, epsilon: float) -> float:
    if epsilon <= 0 or sensitivity <= 0:
        raise ValueError("epsilon and sensitivity must be positive")
    return 0.0 if math.isinf(epsilon) else sensitivity / epsilon

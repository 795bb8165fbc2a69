"""Sparse count fingerprints over molecular graphs.

Six kinds are provided. ``ATOM_PAIR``, ``PATH`` and ``PHARM_LITE`` are
reproducible analogues of MinHashed atom pairs, Avalon and 2D pharmacophore
fingerprints respectively; none of them is bit-compatible with RDKit.
"""

from __future__ import annotations

import enum
import hashlib
import struct
import threading
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .molgraph import HALOGENS, BondOrder, Molecule


class FingerprintKind(str, enum.Enum):
    ECFP = "ecfp"
    FCFP = "fcfp"
    ATOM_PAIR = "atom_pair"
    PATH = "path"
    PHARM_LITE = "pharm_lite"
    BOC = "boc"


ALL_KINDS = tuple(FingerprintKind)


class UnsupportedKind(ValueError):
    """Requested fingerprint kind is not enabled."""


@dataclass(frozen=True)
class Fingerprint:
    kind: FingerprintKind
    counts: Mapping[int, int]
    dim_hint: int = 2048

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @cached_property
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted feature keys and their counts as float arrays."""
        keys = np.fromiter(self.counts.keys(), dtype=np.int64, count=len(self.counts))
        vals = np.fromiter(self.counts.values(), dtype=float, count=len(self.counts))
        order = np.argsort(keys)
        return keys[order], vals[order]


@dataclass(frozen=True)
class FingerprintParams:
    ecfp_radius: int = 2
    path_max_len: int = 7
    pair_max_distance: int = 15
    dim_hint: int = 2048


@lru_cache(maxsize=1 << 20)
def _hash(*parts: object) -> int:
    """Stable 32-bit hash of a tuple of ints and strings."""
    data = repr(parts).encode()
    return struct.unpack("<I", hashlib.blake2b(data, digest_size=4).digest())[0]


_ELEMENT_CODE = {el: i + 1 for i, el in enumerate(("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"))}


# pharmacophoric classes (bit flags)
DONOR, ACCEPTOR, AROMATIC, HALOGEN, BASIC, ACIDIC = 1, 2, 4, 8, 16, 32


def pharmacophore_classes(mol: Molecule) -> list[int]:
    """Bitmask of pharmacophoric classes per atom, from simple structural rules."""
    atoms = mol.atoms
    flags = []
    for i, atom in enumerate(atoms):
        f = 0
        el = atom.element
        nbrs = mol.neighbors[i]
        if el in ("N", "O") and atom.hydrogens > 0:
            f |= DONOR
        if el == "O" and atom.formal_charge <= 0:
            f |= ACCEPTOR
        if el == "N" and atom.hydrogens == 0 and atom.formal_charge <= 0 and (
                (atom.aromatic and len(nbrs) == 2)
                or any(b.order in (BondOrder.DOUBLE, BondOrder.TRIPLE) for _, b in nbrs)):
            f |= ACCEPTOR
        if atom.aromatic:
            f |= AROMATIC
        if el in HALOGENS:
            f |= HALOGEN
        if el == "N" and not atom.aromatic and atom.formal_charge >= 0 and all(
                b.order is BondOrder.SINGLE for _, b in nbrs):
            amide = any(
                atoms[j].element in ("C", "S") and (atoms[j].aromatic or any(
                    b2.order is BondOrder.DOUBLE and atoms[b2.other(j)].element in ("O", "S", "N")
                    for _, b2 in mol.neighbors[j]))
                for j, _ in nbrs)
            if not amide:
                f |= BASIC
        if el == "O" and (atom.hydrogens > 0 or atom.formal_charge < 0) and len(nbrs) == 1:
            j = nbrs[0][0]
            if atoms[j].element in ("C", "S", "P") and any(
                    b2.order is BondOrder.DOUBLE and atoms[b2.other(j)].element == "O"
                    for _, b2 in mol.neighbors[j]):
                f |= ACIDIC
        flags.append(f)
    return flags


def _circular(mol: Molecule, initial: list[int], radius: int) -> tuple[dict[int, int], list[tuple[int, int, int]]]:
    """Morgan-style circular features; returns counts and (radius, center, id) records."""
    n = len(mol.atoms)
    ids = [_hash(0, inv) for inv in initial]
    counts: dict[int, int] = {}
    records: list[tuple[int, int, int]] = []
    for i in range(n):
        counts[ids[i]] = counts.get(ids[i], 0) + 1
        records.append((0, i, ids[i]))
    bond_envs = [frozenset() for _ in range(n)]
    seen_envs = set()
    for r in range(1, radius + 1):
        new_ids = []
        new_bond_envs = []
        for i in range(n):
            nb = sorted((int(b.order), ids[j]) for j, b in mol.neighbors[i])
            new_ids.append(_hash(r, ids[i], tuple(nb)))
            env = set(bond_envs[i])
            for j, b in mol.neighbors[i]:
                env.add(frozenset((b.a, b.b)))
                env |= bond_envs[j]
            new_bond_envs.append(frozenset(env))
        # drop environments already covered; same-round duplicates keep the lowest id
        for i in sorted(range(n), key=lambda k: new_ids[k]):
            env = new_bond_envs[i]
            if not env or env in seen_envs:
                continue
            seen_envs.add(env)
            counts[new_ids[i]] = counts.get(new_ids[i], 0) + 1
            records.append((r, i, new_ids[i]))
        ids, bond_envs = new_ids, new_bond_envs
    return counts, records


def ecfp_invariants(mol: Molecule) -> list[int]:
    return [
        _hash(_ELEMENT_CODE[a.element], mol.degrees[i], a.formal_charge, int(a.aromatic),
              int(a.ring_membership))
        for i, a in enumerate(mol.atoms)
    ]


def ecfp_features(mol: Molecule, radius: int = 2) -> list[tuple[int, int, int]]:
    """``(radius, center atom, feature id)`` for every retained ECFP environment."""
    return _circular(mol, ecfp_invariants(mol), radius)[1]


def _ecfp(mol: Molecule, p: FingerprintParams) -> dict[int, int]:
    return _circular(mol, ecfp_invariants(mol), p.ecfp_radius)[0]


def _fcfp(mol: Molecule, p: FingerprintParams) -> dict[int, int]:
    return _circular(mol, pharmacophore_classes(mol), p.ecfp_radius)[0]


def _hash_codes(tag: str, codes: np.ndarray) -> dict[int, int]:
    """Hash each distinct integer feature code once, keeping multiplicities."""
    values, counts = np.unique(codes, return_counts=True)
    out: dict[int, int] = {}
    for v, c in zip(values.tolist(), counts.tolist()):
        key = _hash(tag, v)
        out[key] = out.get(key, 0) + c
    return out


def _atom_pair(mol: Molecule, p: FingerprintParams) -> dict[int, int]:
    inv = np.asarray([_ELEMENT_CODE[a.element] * 10 + min(mol.degrees[i], 4) * 2 + int(a.aromatic)
                      for i, a in enumerate(mol.atoms)], dtype=np.int64)
    i, j = np.triu_indices(len(inv), k=1)
    d = mol.distances[i, j]
    keep = d <= p.pair_max_distance
    lo = np.minimum(inv[i], inv[j])[keep]
    hi = np.maximum(inv[i], inv[j])[keep]
    return _hash_codes("ap", (lo * 1000 + hi) * 1000 + d[keep])


def _path(mol: Molecule, p: FingerprintParams) -> dict[int, int]:
    tokens = [(_ELEMENT_CODE[a.element] * (-1 if a.aromatic else 1)) for a in mol.atoms]
    paths: Counter[tuple[int, ...]] = Counter()
    neighbors = [[(j, int(b.order)) for j, b in nb] for nb in mol.neighbors]
    max_len = p.path_max_len

    for start in range(len(tokens)):
        stack = [(start, (tokens[start],), (start,))]
        while stack:
            u, seq, visited = stack.pop()
            for v, order in neighbors[u]:
                if v in visited:
                    continue
                new_seq = seq + (order, tokens[v])
                new_visited = visited + (v,)
                # each undirected path counted once, from its lower-index end
                if start < v:
                    paths[min(new_seq, new_seq[::-1])] += 1
                if len(new_visited) <= max_len:
                    stack.append((v, new_seq, new_visited))
    counts: dict[int, int] = {}
    for seq, c in paths.items():
        key = _hash("p", seq)
        counts[key] = counts.get(key, 0) + c
    return counts


_TRIPLE_ORDERS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


def _distance_bins(dist: np.ndarray) -> np.ndarray:
    return np.where(dist <= 2, 0, np.where(dist <= 5, 1, 2))


def _pharm_lite(mol: Molecule, p: FingerprintParams) -> dict[int, int]:
    classes = np.asarray(pharmacophore_classes(mol), dtype=np.int64)
    points = np.flatnonzero(classes)
    if len(points) < 2:
        return {}
    cls = classes[points]
    bins = _distance_bins(mol.distances[np.ix_(points, points)])
    i, j = np.triu_indices(len(points), k=1)
    pair_codes = (np.minimum(cls[i], cls[j]) * 64 + np.maximum(cls[i], cls[j])) * 4 + bins[i, j]
    counts = _hash_codes("ph2", pair_codes)
    if len(points) >= 3:
        tri = np.asarray(list(combinations(range(len(points)), 3)), dtype=np.int64)
        forms = []
        # canonical triple: lexicographically smallest (classes, pairwise bins) over orderings
        for x, y, z in _TRIPLE_ORDERS:
            a, b, c = tri[:, x], tri[:, y], tri[:, z]
            code = (cls[a] * 64 + cls[b]) * 64 + cls[c]
            code = ((code * 4 + bins[a, b]) * 4 + bins[a, c]) * 4 + bins[b, c]
            forms.append(code)
        for key, c in _hash_codes("ph3", np.min(forms, axis=0)).items():
            counts[key] = counts.get(key, 0) + c
    return counts


def _boc(mol: Molecule, p: FingerprintParams) -> dict[int, int]:
    counts: dict[int, int] = {}
    for ch in mol.canonical:
        counts[ord(ch)] = counts.get(ord(ch), 0) + 1
    return counts


_BUILDERS = {
    FingerprintKind.ECFP: _ecfp,
    FingerprintKind.FCFP: _fcfp,
    FingerprintKind.ATOM_PAIR: _atom_pair,
    FingerprintKind.PATH: _path,
    FingerprintKind.PHARM_LITE: _pharm_lite,
    FingerprintKind.BOC: _boc,
}


@dataclass
class Featurizer:
    """Computes fingerprints for a set of enabled kinds, caching by canonical SMILES."""

    enabled: tuple[FingerprintKind, ...] = ALL_KINDS
    params: FingerprintParams = field(default_factory=FingerprintParams)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        self.enabled = tuple(FingerprintKind(k) for k in self.enabled)

    def compute(self, mol: Molecule, kind: FingerprintKind | str) -> Fingerprint:
        kind = FingerprintKind(kind)
        if kind not in self.enabled:
            raise UnsupportedKind(f"fingerprint kind {kind.value!r} is not enabled")
        key = (mol.canonical, kind)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        fp = Fingerprint(kind, _BUILDERS[kind](mol, self.params), self.params.dim_hint)
        with self._lock:
            self._cache.setdefault(key, fp)
        return fp

    def compute_all(self, mol: Molecule, kinds: Iterable[FingerprintKind | str] | None = None
                    ) -> dict[FingerprintKind, Fingerprint]:
        kinds = self.enabled if kinds is None else kinds
        return {FingerprintKind(k): self.compute(mol, k) for k in kinds}


def compute_fingerprint(mol: Molecule, kind: FingerprintKind | str,
                        params: FingerprintParams | None = None) -> Fingerprint:
    """Uncached single fingerprint with the given (or default) parameters."""
    kind = FingerprintKind(kind)
    params = params or FingerprintParams()
    return Fingerprint(kind, _BUILDERS[kind](mol, params), params.dim_hint)


_default = Featurizer()


def compute_all(mol: Molecule, kinds: Iterable[FingerprintKind | str] | None = None
                ) -> dict[FingerprintKind, Fingerprint]:
    """All requested kinds from the shared default-parameter cache."""
    return _default.compute_all(mol, kinds)

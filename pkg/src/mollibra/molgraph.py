"""Molecular graphs: SMILES parsing, validation, canonical and randomized writing.

Only a subset of SMILES is understood: organic-subset atoms, bracket atoms
with hydrogen count and charge, branches, ring closures (``1``-``9`` and
``%nn``) and the bond symbols ``- = # :``. Stereochemistry, isotopes and
dot-disconnected fragments are rejected with :class:`SmilesSyntaxError`.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

SUPPORTED_ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ELEMENTS = ("B", "C", "N", "O", "P", "S")
HALOGENS = ("F", "Cl", "Br", "I")

# Standard valences used to derive implicit hydrogens on organic-subset atoms.
DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3,), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
MAX_VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "P": 5, "S": 6,
    "F": 1, "Cl": 1, "Br": 1, "I": 1,
}
# Aromatic atoms that donate a lone pair rather than take part in a pi bond.
_LONE_PAIR_AROMATIC = ("O", "S")


class MolError(ValueError):
    """Base class for molecule construction failures."""


class SmilesSyntaxError(MolError):
    """Malformed or unsupported SMILES."""


class ValenceError(MolError):
    """An atom exceeds its maximum valence."""


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> int:
        # aromatic bonds count 1; the extra pi electron is handled per atom
        return 1 if self is BondOrder.AROMATIC else int(self)


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    hydrogens: int = 0
    ring_membership: bool = False


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder
    in_ring: bool = False

    def other(self, i: int) -> int:
        return self.b if i == self.a else self.a


@dataclass(frozen=True, eq=False)
class Molecule:
    """A connected, valence-valid molecular graph.

    Equality and hashing go through the canonical SMILES, so two molecules
    compare equal exactly when their graphs are isomorphic.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    canonical: str
    source: str

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Molecule):
            return NotImplemented
        return self.canonical == other.canonical

    def __hash__(self) -> int:
        return hash(self.canonical)

    def __repr__(self) -> str:
        return f"Molecule({self.canonical!r})"

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def neighbors(self) -> tuple[tuple[tuple[int, Bond], ...], ...]:
        """Per atom, the ``(neighbor index, bond)`` pairs."""
        return _adjacency(len(self.atoms), self.bonds)

    @cached_property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(nb) for nb in self.neighbors)

    @cached_property
    def distances(self) -> np.ndarray:
        """All-pairs topological distance matrix (bond counts)."""
        n = len(self.atoms)
        rows = [b.a for b in self.bonds]
        cols = [b.b for b in self.bonds]
        adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        raw = shortest_path(adj, directed=False, unweighted=True)
        dist = np.where(np.isinf(raw), -1, raw).astype(np.int64)
        dist.setflags(write=False)
        return dist

    def formula(self) -> dict[str, int]:
        """Element counts including implicit and explicit hydrogens."""
        counts: dict[str, int] = {}
        for atom in self.atoms:
            counts[atom.element] = counts.get(atom.element, 0) + 1
            if atom.hydrogens:
                counts["H"] = counts.get("H", 0) + atom.hydrogens
        return counts

    @property
    def ring_count(self) -> int:
        return len(self.bonds) - len(self.atoms) + 1


def _adjacency(n: int, bonds: Iterable[Bond]):
    adj: list[list[tuple[int, Bond]]] = [[] for _ in range(n)]
    for bond in bonds:
        adj[bond.a].append((bond.b, bond))
        adj[bond.b].append((bond.a, bond))
    return tuple(tuple(row) for row in adj)


def max_valence(element: str, charge: int) -> int:
    base = MAX_VALENCE[element]
    if charge == 0:
        return base
    if element == "C":
        return base - abs(charge)
    if element == "B":
        return base - charge
    return base + charge if charge > 0 else base - abs(charge)


def default_hydrogens(element: str, aromatic: bool, aromatic_bonds: int,
                      other_valence: int) -> int:
    """Implicit hydrogen count for an organic-subset atom.

    Raises :class:`ValenceError` when no standard valence fits.
    """
    if aromatic:
        used = aromatic_bonds + other_valence
        if element in _LONE_PAIR_AROMATIC:
            return max(0, 2 - used)
        return max(0, DEFAULT_VALENCES[element][-1] - used - 1)
    for valence in DEFAULT_VALENCES[element]:
        if valence >= other_valence:
            return valence - other_valence
    raise ValenceError(
        f"{element} with bond order sum {other_valence} exceeds valence table")


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\[[^\]]*\]|Br|Cl|%\d\d|[BCNOPSFIbcnops]|[()=#:\-./\\@*%0-9]|.")
_BRACKET = re.compile(
    r"^\[(?P<isotope>\d+)?(?P<element>Cl|Br|[BCNOPSFI]|[bcnops])"
    r"(?P<chiral>@+)?(?P<h>H\d?)?(?P<charge>\+\d|-\d|\++|-+)?(?P<cls>:\d+)?\]$")
_ORGANIC_TOKENS = frozenset(("B", "C", "N", "O", "P", "S", "F", "I", "Cl", "Br",
                             "b", "c", "n", "o", "p", "s"))
_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE,
                 "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}


@dataclass
class _RawAtom:
    element: str
    aromatic: bool
    charge: int = 0
    hydrogens: int | None = None  # None: derive from the valence table


def _parse_bracket(token: str) -> _RawAtom:
    match = _BRACKET.match(token)
    if match is None:
        raise SmilesSyntaxError(f"unsupported bracket atom {token!r}")
    if match["isotope"] or match["chiral"] or match["cls"]:
        raise SmilesSyntaxError(
            f"isotopes, chirality and atom classes are not supported: {token!r}")
    symbol = match["element"]
    aromatic = symbol.islower()
    element = symbol.capitalize() if aromatic else symbol
    h = match["h"]
    hydrogens = 0 if not h else (int(h[1:]) if len(h) > 1 else 1)
    charge = 0
    text = match["charge"]
    if text:
        sign = 1 if text[0] == "+" else -1
        if len(text) > 1 and text[1].isdigit():
            charge = sign * int(text[1:])
        else:
            charge = sign * len(text)
    if abs(charge) > 2:
        raise SmilesSyntaxError(f"formal charge {charge} out of range in {token!r}")
    return _RawAtom(element, aromatic, charge, hydrogens)


def parse_smiles(smiles: str) -> Molecule:
    """Parse a SMILES string into a validated :class:`Molecule`."""
    if not smiles or not smiles.isascii():
        raise SmilesSyntaxError("SMILES must be a non-empty ASCII string")
    atoms: list[_RawAtom] = []
    bonds: dict[frozenset, tuple[int, int, BondOrder | None]] = {}
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, BondOrder | None]] = {}
    prev: int | None = None
    pending: BondOrder | None = None

    def add_bond(a: int, b: int, order: BondOrder | None) -> None:
        key = frozenset((a, b))
        if a == b or key in bonds:
            raise SmilesSyntaxError(f"invalid or duplicate bond {a}-{b} in {smiles!r}")
        bonds[key] = (a, b, order)

    for token in _TOKEN.findall(smiles):
        if token.startswith("[") or token in _ORGANIC_TOKENS:
            if token.startswith("["):
                atom = _parse_bracket(token)
            elif token.islower():
                atom = _RawAtom(token.upper(), True)
            else:
                atom = _RawAtom(token, False)
            atoms.append(atom)
            idx = len(atoms) - 1
            if prev is not None:
                add_bond(prev, idx, pending)
            elif pending is not None:
                raise SmilesSyntaxError(f"bond symbol without a preceding atom in {smiles!r}")
            prev, pending = idx, None
        elif token in _BOND_SYMBOLS:
            if pending is not None or prev is None:
                raise SmilesSyntaxError(f"misplaced bond symbol in {smiles!r}")
            pending = _BOND_SYMBOLS[token]
        elif token == "(":
            if prev is None or pending is not None:
                raise SmilesSyntaxError(f"misplaced branch in {smiles!r}")
            branch_stack.append(prev)
        elif token == ")":
            if not branch_stack or pending is not None:
                raise SmilesSyntaxError(f"unbalanced parenthesis in {smiles!r}")
            prev = branch_stack.pop()
        elif token.isdigit() or (token.startswith("%") and len(token) == 3):
            if prev is None:
                raise SmilesSyntaxError(f"ring closure without an atom in {smiles!r}")
            digit = int(token.lstrip("%"))
            if digit in rings:
                other, order = rings.pop(digit)
                if pending is not None and order is not None and pending != order:
                    raise SmilesSyntaxError(f"conflicting ring-closure bonds in {smiles!r}")
                add_bond(other, prev, pending if pending is not None else order)
            else:
                rings[digit] = (prev, pending)
            pending = None
        elif token == ".":
            raise SmilesSyntaxError(f"disconnected fragments are not supported: {smiles!r}")
        elif token in ("/", "\\", "@"):
            raise SmilesSyntaxError(f"stereochemistry is not supported: {smiles!r}")
        else:
            raise SmilesSyntaxError(f"unknown token {token!r} in {smiles!r}")

    if not atoms:
        raise SmilesSyntaxError(f"no atoms in {smiles!r}")
    if rings:
        raise SmilesSyntaxError(f"unclosed ring bond(s) {sorted(rings)} in {smiles!r}")
    if branch_stack:
        raise SmilesSyntaxError(f"unbalanced parenthesis in {smiles!r}")
    if pending is not None:
        raise SmilesSyntaxError(f"dangling bond symbol in {smiles!r}")

    resolved = []
    for a, b, order in bonds.values():
        both = atoms[a].aromatic and atoms[b].aromatic
        if order is None:
            order = BondOrder.AROMATIC if both else BondOrder.SINGLE
        elif order is BondOrder.AROMATIC and not both:
            raise SmilesSyntaxError(f"aromatic bond between non-aromatic atoms in {smiles!r}")
        resolved.append((a, b, order))
    return _finalize(atoms, resolved, smiles)


def assemble(atoms: Sequence[tuple[str, bool, int, int | None]],
             bonds: Sequence[tuple[int, int, BondOrder]],
             source: str = "") -> Molecule:
    """Build a molecule from ``(element, aromatic, charge, hydrogens)`` tuples.

    ``hydrogens=None`` derives the count from the valence table. Used by the
    graph editors; runs the same validation and perception as the parser.
    """
    raw = []
    for element, aromatic, charge, hydrogens in atoms:
        if element not in SUPPORTED_ELEMENTS:
            raise MolError(f"unsupported element {element!r}")
        raw.append(_RawAtom(element, aromatic, charge, hydrogens))
    seen = set()
    for a, b, _ in bonds:
        key = frozenset((a, b))
        if a == b or key in seen or not (0 <= a < len(raw) and 0 <= b < len(raw)):
            raise MolError(f"invalid bond {a}-{b}")
        seen.add(key)
    return _finalize(raw, [(a, b, BondOrder(o)) for a, b, o in bonds], source)


def _bridges(n: int, edges: Sequence[tuple[int, int, BondOrder]]) -> set[int]:
    """Indices of edges that are bridges (not part of any cycle)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i, (a, b, _) in enumerate(edges):
        adj[a].append((b, i))
        adj[b].append((a, i))
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, parent_edge, it = stack[-1]
            advanced = False
            for v, ei in it:
                if ei == parent_edge:
                    continue
                if disc[v] < 0:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, ei, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[u])
                    if low[u] > disc[p]:
                        bridges.add(parent_edge)
    return bridges


def _small_rings(n: int, edges: Sequence[tuple[int, int, BondOrder]],
                 ring_edges: set[int], max_size: int = 8) -> list[list[int]]:
    """Shortest cycle through each ring bond, as ordered atom lists."""
    adj: list[list[int]] = [[] for _ in range(n)]
    for i in ring_edges:
        a, b, _ = edges[i]
        adj[a].append(b)
        adj[b].append(a)
    found: dict[frozenset, list[int]] = {}
    for i in sorted(ring_edges):
        a, b, _ = edges[i]
        parent = {a: -1}
        queue = deque([a])
        while queue and b not in parent:
            u = queue.popleft()
            for v in adj[u]:
                if (u == a and v == b) or v in parent:
                    continue
                parent[v] = u
                queue.append(v)
        if b not in parent:
            continue
        path = [b]
        while path[-1] != a:
            path.append(parent[path[-1]])
        if len(path) <= max_size:
            found.setdefault(frozenset(path), path)
    return list(found.values())


def _perceive_aromaticity(atoms: list[_RawAtom], edges: list[list], rings: list[list[int]]) -> None:
    """Flag Kekule-written rings with six pi electrons as aromatic, in place."""
    bond_at = {frozenset((a, b)): i for i, (a, b, _) in enumerate(edges)}
    adj: list[list[int]] = [[] for _ in atoms]
    for i, (a, b, _) in enumerate(edges):
        adj[a].append(i)
        adj[b].append(i)
    candidates = [r for r in rings if 5 <= len(r) <= 7
                  and all(atoms[i].element in ("C", "N", "O", "S") for i in r)]
    changed = True
    while changed:
        changed = False
        for ring in candidates:
            ring_bonds = [bond_at[frozenset((ring[k], ring[(k + 1) % len(ring)]))]
                          for k in range(len(ring))]
            if all(edges[i][2] is BondOrder.AROMATIC for i in ring_bonds):
                continue
            in_ring = set(ring_bonds)
            electrons = 0
            for idx in ring:
                atom = atoms[idx]
                orders = [edges[i][2] for i in adj[idx]]
                ring_double = any(edges[i][2] is BondOrder.DOUBLE for i in adj[idx] if i in in_ring)
                exo_double = any(edges[i][2] is BondOrder.DOUBLE for i in adj[idx] if i not in in_ring)
                has_double = ring_double or exo_double
                if atom.charge != 0 or BondOrder.TRIPLE in orders:
                    electrons = -1
                    break
                if atom.aromatic:
                    donor = atom.element in _LONE_PAIR_AROMATIC or (
                        atom.element == "N" and len(orders) + (atom.hydrogens or 0) == 3
                        and sum(o is BondOrder.AROMATIC for o in orders) == 2
                        and (atom.hydrogens or 0) > 0)
                    electrons += 2 if donor else 1
                elif ring_double and not exo_double:
                    electrons += 1
                elif not has_double and atom.element in ("O", "S") and len(orders) == 2:
                    electrons += 2
                elif (not has_double and atom.element == "N"
                      and len(orders) + (atom.hydrogens or 0) == 3):
                    electrons += 2
                else:
                    electrons = -1
                    break
            if electrons != 6:
                continue
            for idx in ring:
                atoms[idx].aromatic = True
            for i in ring_bonds:
                edges[i][2] = BondOrder.AROMATIC
            changed = True


def _finalize(atoms: list[_RawAtom], bonds: Sequence[tuple[int, int, BondOrder]],
              source: str) -> Molecule:
    n = len(atoms)
    edges = [[a, b, order] for a, b, order in bonds]
    # connectivity
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b, _ in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    if len(seen) != n:
        raise SmilesSyntaxError(f"molecule graph is disconnected: {source!r}")

    bridges = _bridges(n, edges)
    ring_edges = set(range(len(edges))) - bridges
    for i in bridges:
        if edges[i][2] is BondOrder.AROMATIC:
            edges[i][2] = BondOrder.SINGLE

    # implicit hydrogens from the (kekule or aromatic) input form
    for idx, atom in enumerate(atoms):
        if atom.hydrogens is None:
            arom, other = _valence_parts(idx, edges)
            if atom.aromatic and arom == 0:
                raise SmilesSyntaxError(f"aromatic atom outside a ring in {source!r}")
            atom.hydrogens = default_hydrogens(atom.element, atom.aromatic, arom, other)
    for idx, atom in enumerate(atoms):
        if atom.aromatic and _valence_parts(idx, edges)[0] == 0:
            raise SmilesSyntaxError(f"aromatic atom outside a ring in {source!r}")

    if ring_edges:
        _perceive_aromaticity(atoms, edges, _small_rings(n, edges, ring_edges))

    ring_atoms = set()
    for i in ring_edges:
        ring_atoms.update(edges[i][:2])
    for idx, atom in enumerate(atoms):
        arom, other = _valence_parts(idx, edges)
        total = arom + other + atom.hydrogens
        if total > max_valence(atom.element, atom.charge):
            raise ValenceError(
                f"atom {idx} ({atom.element}, charge {atom.charge}) has valence {total}"
                f" in {source!r}")

    final_atoms = tuple(
        Atom(a.element, a.aromatic, a.charge, a.hydrogens, i in ring_atoms)
        for i, a in enumerate(atoms))
    final_bonds = tuple(
        Bond(a, b, order, i in ring_edges) for i, (a, b, order) in enumerate(edges))
    canonical = _write_smiles(final_atoms, final_bonds, canonical_ranks(final_atoms, final_bonds))
    return Molecule(final_atoms, final_bonds, canonical, source or canonical)


def _valence_parts(idx: int, edges) -> tuple[int, int]:
    arom = other = 0
    for a, b, order in edges:
        if a == idx or b == idx:
            if order is BondOrder.AROMATIC:
                arom += 1
            else:
                other += int(order)
    return arom, other


# --------------------------------------------------------------------------
# canonical ranking and writing
# --------------------------------------------------------------------------

def _dense_rank(keys: Sequence) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(ranks: list[int], adj) -> list[int]:
    n_classes = len(set(ranks))
    while True:
        keys = [(ranks[i], tuple(sorted((int(b.order), ranks[j]) for j, b in adj[i])))
                for i in range(len(ranks))]
        new = _dense_rank(keys)
        n_new = len(set(new))
        if n_new == n_classes:
            return new
        ranks, n_classes = new, n_new


def canonical_ranks(atoms: Sequence[Atom], bonds: Sequence[Bond]) -> list[int]:
    """Unique canonical rank per atom via iterative neighbourhood refinement.

    Initial invariant: element, degree, charge, aromaticity, hydrogens and
    ring membership. Remaining ties are broken one class at a time.
    """
    adj = _adjacency(len(atoms), bonds)
    keys = [(a.element, len(adj[i]), a.formal_charge, a.aromatic, a.hydrogens,
             a.ring_membership) for i, a in enumerate(atoms)]
    ranks = _refine(_dense_rank(keys), adj)
    n = len(atoms)
    while len(set(ranks)) < n:
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        tied = min(r for r, c in counts.items() if c > 1)
        chosen = ranks.index(tied)
        ranks = [2 * r for r in ranks]
        ranks[chosen] -= 1
        ranks = _refine(_dense_rank(ranks), adj)
    return ranks


def _atom_symbol(atom: Atom, arom: int, other: int) -> str:
    symbol = atom.element.lower() if atom.aromatic else atom.element
    if atom.formal_charge == 0:
        try:
            implicit = default_hydrogens(atom.element, atom.aromatic, arom, other)
        except ValenceError:
            implicit = -1
        if implicit == atom.hydrogens:
            return symbol
    text = "[" + symbol
    if atom.hydrogens:
        text += "H" + (str(atom.hydrogens) if atom.hydrogens > 1 else "")
    q = atom.formal_charge
    if q:
        text += ("+" if q > 0 else "-") + (str(abs(q)) if abs(q) > 1 else "")
    return text + "]"


def _bond_symbol(bond: Bond, atoms: Sequence[Atom]) -> str:
    if bond.order is BondOrder.SINGLE:
        return "-" if atoms[bond.a].aromatic and atoms[bond.b].aromatic else ""
    return {BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ""}[bond.order]


def _write_smiles(atoms: Sequence[Atom], bonds: Sequence[Bond], ranks: Sequence) -> str:
    """Depth-first SMILES writer; ``ranks`` fixes start atom and branch order."""
    n = len(atoms)
    adj = _adjacency(n, bonds)
    parts = [[0, 0] for _ in range(n)]
    for b in bonds:
        for i in (b.a, b.b):
            if b.order is BondOrder.AROMATIC:
                parts[i][0] += 1
            else:
                parts[i][1] += int(b.order)

    start = min(range(n), key=lambda i: ranks[i])
    visited = [False] * n
    children: list[list[tuple[int, Bond]]] = [[] for _ in range(n)]
    closures: list[list[tuple[int, Bond]]] = [[] for _ in range(n)]  # (partner, bond)
    seen_bonds: set[int] = set()
    order: list[int] = []
    # iterative DFS producing the spanning tree and ring-closure bonds
    visited[start] = True
    order.append(start)
    stack = [(start, None, iter(sorted(adj[start], key=lambda t: ranks[t[0]])))]
    while stack:
        u, parent_bond, it = stack[-1]
        for v, bond in it:
            if bond is parent_bond or id(bond) in seen_bonds:
                continue
            seen_bonds.add(id(bond))
            if visited[v]:
                closures[v].append((u, bond))
                closures[u].append((v, bond))
                continue
            visited[v] = True
            order.append(v)
            children[u].append((v, bond))
            stack.append((v, bond, iter(sorted(adj[v], key=lambda t: ranks[t[0]]))))
            break
        else:
            stack.pop()

    position = {atom: k for k, atom in enumerate(order)}
    out: list[str] = []
    open_digits: dict[int, int] = {}  # id(bond) -> digit
    free: list[int] = []
    next_digit = 1

    def emit(u: int) -> None:
        nonlocal next_digit
        out.append(_atom_symbol(atoms[u], *parts[u]))
        closing = [(v, b) for v, b in closures[u] if position[v] < position[u]]
        opening = [(v, b) for v, b in closures[u] if position[v] > position[u]]
        released = []
        for v, b in sorted(closing, key=lambda t: open_digits[id(t[1])]):
            digit = open_digits.pop(id(b))
            out.append(_digit(digit))
            released.append(digit)
        for v, b in sorted(opening, key=lambda t: position[t[0]]):
            if free:
                free.sort()
                digit = free.pop(0)
            else:
                digit = next_digit
                next_digit += 1
            open_digits[id(b)] = digit
            out.append(_bond_symbol(b, atoms) + _digit(digit))
        free.extend(released)

    # explicit stack for emission: ("atom", u, bond) or ("text", s)
    work: list[tuple] = [("atom", start, None)]
    while work:
        item = work.pop()
        if item[0] == "text":
            out.append(item[1])
            continue
        _, u, bond = item
        if bond is not None:
            out.append(_bond_symbol(bond, atoms))
        emit(u)
        kids = children[u]
        pushes: list[tuple] = []
        for k, (v, b) in enumerate(kids):
            if k < len(kids) - 1:
                pushes.append(("text", "("))
                pushes.append(("atom", v, b))
                pushes.append(("text", ")"))
            else:
                pushes.append(("atom", v, b))
        work.extend(reversed(pushes))
    return "".join(out)


def _digit(d: int) -> str:
    return str(d) if d < 10 else f"%{d:02d}"


def to_canonical_smiles(mol: Molecule) -> str:
    """Canonical SMILES; isomorphic molecules give identical strings."""
    return _write_smiles(mol.atoms, mol.bonds, canonical_ranks(mol.atoms, mol.bonds))


def randomize_smiles(mol: Molecule, seed: int) -> str:
    """A valid SMILES of the same graph, written from a seeded random atom order."""
    ranks = np.random.default_rng(seed).permutation(len(mol.atoms)).tolist()
    return _write_smiles(mol.atoms, mol.bonds, ranks)


def validate(mol: Molecule) -> None:
    """Check structural invariants, raising :class:`MolError` on violation."""
    n = len(mol.atoms)
    pairs = set()
    for bond in mol.bonds:
        if bond.a == bond.b or not (0 <= bond.a < n and 0 <= bond.b < n):
            raise MolError(f"bond {bond} references invalid atoms")
        key = frozenset((bond.a, bond.b))
        if key in pairs:
            raise MolError(f"duplicate bond between {bond.a} and {bond.b}")
        pairs.add(key)
        if bond.order is BondOrder.AROMATIC and not (
                mol.atoms[bond.a].aromatic and mol.atoms[bond.b].aromatic):
            raise MolError("aromatic bond between non-aromatic atoms")
    for i, atom in enumerate(mol.atoms):
        if atom.element not in SUPPORTED_ELEMENTS or abs(atom.formal_charge) > 2:
            raise MolError(f"atom {i} outside supported set: {atom}")
        total = sum(b.order.valence for _, b in mol.neighbors[i]) + atom.hydrogens
        if total > max_valence(atom.element, atom.formal_charge):
            raise ValenceError(f"atom {i} has valence {total}")
    dist = mol.distances
    if n and (dist < 0).any():
        raise MolError("molecule graph is disconnected")
    if parse_smiles(mol.canonical).canonical != mol.canonical:
        raise MolError(f"canonical SMILES {mol.canonical!r} is not stable")


def read_smiles_file(path) -> list[str]:
    """Seed-molecule file reader: one SMILES per line.

    ``#`` also denotes a triple bond, so it starts a comment only at the
    beginning of a line or after whitespace.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            fields = line.split()
            if fields and not fields[0].startswith("#"):
                out.append(fields[0])
    return out

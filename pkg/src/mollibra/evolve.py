"""Offspring generation: elite selection, parent sampling and graph edits."""

from __future__ import annotations

import json
import logging
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .molgraph import BondOrder, MolError, Molecule, assemble, parse_smiles

logger = logging.getLogger(__name__)

SUBSTITUTE_ELEMENTS = ("C", "N", "O", "S", "F", "Cl", "Br")
APPEND_ELEMENTS = ("C", "N", "O", "F", "Cl")
MUTATIONS = ("substitute", "bond_order", "append", "delete")


class EditorUnavailable(RuntimeError):
    """The external editor failed and rule-based fallback is disabled."""


@dataclass(frozen=True)
class EvolveConfig:
    n_elite: int = 30
    n_pairs: int = 10
    n_siblings: int = 5
    mutation_rate: float = 0.5
    max_atoms: int = 50
    max_attempts: int = 10

    def __post_init__(self) -> None:
        if self.n_elite < 2 or self.n_pairs < 1 or self.n_siblings < 1:
            raise ValueError("need n_elite >= 2, n_pairs >= 1 and n_siblings >= 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")


# ---------------------------------------------------------------------------
# parent selection
# ---------------------------------------------------------------------------

def roulette_mass(scores: Sequence[float]) -> np.ndarray:
    y = np.asarray(scores, dtype=float)
    mass = y - y.min() + 1e-6
    return mass / mass.sum()


def sample_parent_indices(scores: Sequence[float], rng: np.random.Generator) -> tuple[int, int]:
    """Two distinct indices by score-proportional roulette."""
    if len(scores) < 2:
        raise ValueError("need at least two elite molecules")
    p = roulette_mass(scores)
    i = int(rng.choice(len(p), p=p))
    rest = p.copy()
    rest[i] = 0.0
    j = int(rng.choice(len(p), p=rest / rest.sum()))
    return i, j


def sample_parents(elite: Sequence[tuple[Molecule, float]], rng: np.random.Generator
                   ) -> tuple[Molecule, Molecule]:
    i, j = sample_parent_indices([y for _, y in elite], rng)
    return elite[i][0], elite[j][0]


# ---------------------------------------------------------------------------
# graph edits
# ---------------------------------------------------------------------------

def _atom_specs(mol: Molecule) -> list[list]:
    return [[a.element, a.aromatic, a.formal_charge, a.hydrogens] for a in mol.atoms]


def _bond_specs(mol: Molecule) -> list[list]:
    return [[b.a, b.b, b.order] for b in mol.bonds]


def _build(atoms: list[list], bonds: list[list]) -> Molecule:
    return assemble([tuple(a) for a in atoms], [tuple(b) for b in bonds])


def cuttable_bonds(mol: Molecule) -> list[int]:
    return [k for k, b in enumerate(mol.bonds) if b.order is BondOrder.SINGLE and not b.in_ring]


def _fragment(mol: Molecule, cut: int, side: int) -> tuple[list[int], int]:
    """Atoms on one side of a cut bond, plus the cut endpoint on that side."""
    bond = mol.bonds[cut]
    start = bond.a if side == 0 else bond.b
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v, b in mol.neighbors[u]:
            if b is bond or v in seen:
                continue
            seen.add(v)
            stack.append(v)
    return sorted(seen), start


def crossover_child(p1: Molecule, cut1: int, side1: int,
                    p2: Molecule, cut2: int, side2: int) -> Molecule:
    """Join one fragment of each parent by a single bond between the cut ends.

    The cut ends each lose and regain one single bond, so hydrogen counts
    carry over unchanged.
    """
    atoms: list[list] = []
    bonds: list[list] = []
    ends = []
    for mol, cut, side in ((p1, cut1, side1), (p2, cut2, side2)):
        keep, end = _fragment(mol, cut, side)
        remap = {old: len(atoms) + i for i, old in enumerate(keep)}
        specs = _atom_specs(mol)
        atoms.extend(specs[i] for i in keep)
        for k, b in enumerate(mol.bonds):
            if k != cut and b.a in remap and b.b in remap:
                bonds.append([remap[b.a], remap[b.b], b.order])
        ends.append(remap[end])
    bonds.append([ends[0], ends[1], BondOrder.SINGLE])
    return _build(atoms, bonds)


def mutate(mol: Molecule, rng: np.random.Generator, kind: str | None = None) -> Molecule:
    """Apply one random graph mutation; raises :class:`MolError` if it is not applicable."""
    kind = kind or MUTATIONS[int(rng.integers(len(MUTATIONS)))]
    atoms = _atom_specs(mol)
    bonds = _bond_specs(mol)
    n = len(atoms)

    if kind == "substitute":
        i = int(rng.integers(n))
        el, arom, charge, h = atoms[i]
        if charge != 0:
            raise MolError("charged atoms are not substituted")
        if arom:
            if mol.degrees[i] != 2 or el not in ("C", "N"):
                raise MolError("aromatic substitution needs a two-connected c or n")
            if el == "C" and h == 1:
                atoms[i] = ["N", True, 0, 0]
            elif el == "N" and h == 0:
                atoms[i] = ["C", True, 0, 1]
            else:
                raise MolError("aromatic substitution not applicable")
        else:
            choices = [e for e in SUBSTITUTE_ELEMENTS if e != el]
            atoms[i] = [choices[int(rng.integers(len(choices)))], False, 0, None]
    elif kind == "bond_order":
        if not bonds:
            raise MolError("no bonds")
        k = int(rng.integers(len(bonds)))
        a, b, order = bonds[k]
        if order is BondOrder.AROMATIC:
            raise MolError("aromatic bond orders are not edited")
        if rng.random() < 0.5:
            if order is BondOrder.TRIPLE or atoms[a][3] < 1 or atoms[b][3] < 1:
                raise MolError("cannot raise bond order")
            bonds[k][2] = BondOrder(int(order) + 1)
            atoms[a][3] -= 1
            atoms[b][3] -= 1
        else:
            if order is BondOrder.SINGLE:
                raise MolError("cannot lower a single bond")
            bonds[k][2] = BondOrder(int(order) - 1)
            atoms[a][3] += 1
            atoms[b][3] += 1
    elif kind == "append":
        hosts = [i for i, a in enumerate(atoms) if a[3] >= 1]
        if not hosts:
            raise MolError("no atom with a free hydrogen")
        i = hosts[int(rng.integers(len(hosts)))]
        atoms[i][3] -= 1
        atoms.append([APPEND_ELEMENTS[int(rng.integers(len(APPEND_ELEMENTS)))], False, 0, None])
        bonds.append([i, n, BondOrder.SINGLE])
    elif kind == "delete":
        leaves = [i for i in range(n) if mol.degrees[i] == 1]
        if n < 2 or not leaves:
            raise MolError("no terminal atom to delete")
        i = leaves[int(rng.integers(len(leaves)))]
        (j, bond), = mol.neighbors[i]
        atoms[j][3] += bond.order.valence
        remap = {old: new for new, old in enumerate(x for x in range(n) if x != i)}
        atoms = [a for x, a in enumerate(atoms) if x != i]
        bonds = [[remap[a], remap[b], o] for a, b, o in bonds if i not in (a, b)]
    else:
        raise ValueError(f"unknown mutation {kind!r}")
    return _build(atoms, bonds)


class Editor(Protocol):
    def edit(self, p1: Molecule, y1: float, p2: Molecule, y2: float,
             n_siblings: int, rng: np.random.Generator) -> list[Molecule]: ...


@dataclass
class RuleEditor:
    """Single-cut crossover followed by an optional mutation."""

    mutation_rate: float = 0.5
    max_atoms: int = 50
    max_attempts: int = 10

    def _one_child(self, p1: Molecule, p2: Molecule, rng: np.random.Generator) -> Molecule:
        cuts1, cuts2 = cuttable_bonds(p1), cuttable_bonds(p2)
        if cuts1 and cuts2:
            child = crossover_child(
                p1, cuts1[int(rng.integers(len(cuts1)))], int(rng.integers(2)),
                p2, cuts2[int(rng.integers(len(cuts2)))], int(rng.integers(2)))
            if rng.random() < self.mutation_rate:
                child = mutate(child, rng)
        else:
            child = mutate(p1 if rng.random() < 0.5 else p2, rng)
        if len(child) > self.max_atoms:
            raise MolError("child exceeds the atom cap")
        return child

    def edit(self, p1, y1, p2, y2, n_siblings, rng):
        children: list[Molecule] = []
        seen: set[str] = set()
        for _ in range(n_siblings):
            for _attempt in range(self.max_attempts):
                try:
                    child = self._one_child(p1, p2, rng)
                except MolError:
                    continue
                if child.canonical in seen:
                    continue
                seen.add(child.canonical)
                children.append(child)
                break
        return children


def edit_mol_rules(x: Molecule, x2: Molecule, n_siblings: int, rng: np.random.Generator,
                   mutation_rate: float = 0.5) -> list[Molecule]:
    return RuleEditor(mutation_rate).edit(x, 0.0, x2, 0.0, n_siblings, rng)


@dataclass
class ExternalEditor:
    """Editor served by an HTTP peer, falling back to rules on failure.

    Request ``{"task_description", "parents": [{"smiles", "score"}, ...],
    "n_siblings"}``; response ``{"smiles": [...]}``.
    """

    url: str
    task_description: str = ""
    timeout: float = 30.0
    fallback: RuleEditor | None = None
    max_inflight: int = 4

    def edit(self, p1, y1, p2, y2, n_siblings, rng):
        payload = {
            "task_description": self.task_description,
            "parents": [{"smiles": p1.canonical, "score": float(y1)},
                        {"smiles": p2.canonical, "score": float(y2)}],
            "n_siblings": n_siblings,
        }
        try:
            data = json.dumps(payload).encode()
            req = urllib.request.Request(self.url, data=data, method="POST",
                                         headers={"Content-Type": "application/json"})
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode())
            smiles = body["smiles"]
            if not isinstance(smiles, list):
                raise ValueError("'smiles' is not a list")
        except (OSError, ValueError, KeyError, TypeError) as exc:
            if self.fallback is None:
                raise EditorUnavailable(f"editor peer {self.url} failed: {exc}") from exc
            logger.warning("editor peer failed (%s); using rule-based edits", exc)
            return self.fallback.edit(p1, y1, p2, y2, n_siblings, rng)
        children: list[Molecule] = []
        seen: set[str] = set()
        dropped = 0
        for s in smiles:
            try:
                mol = parse_smiles(str(s))
            except MolError:
                dropped += 1
                continue
            if mol.canonical not in seen:
                seen.add(mol.canonical)
                children.append(mol)
        if dropped:
            logger.info("dropped %d invalid SMILES from the editor peer", dropped)
        return children[:n_siblings]


# ---------------------------------------------------------------------------
# offspring
# ---------------------------------------------------------------------------

def select_elite(scored: Sequence[tuple[Molecule, float]], n_elite: int
                 ) -> list[tuple[Molecule, float]]:
    """Top ``n_elite`` by score; the stable sort keeps earlier calls first on ties."""
    return sorted(scored, key=lambda r: -r[1])[:n_elite]


def gen_offspring(scored: Sequence[tuple[Molecule, float]], cfg: EvolveConfig,
                  editor: Editor, rng: np.random.Generator) -> list[Molecule]:
    """At most ``n_pairs * n_siblings`` distinct children of elite parents.

    ``scored`` is in oracle-call order. Each pair uses its own sub-generator,
    so results do not depend on how pair edits are scheduled.
    """
    if len(scored) < 2:
        raise ValueError("need at least two scored molecules")
    elite = select_elite(scored, cfg.n_elite)
    scores = [y for _, y in elite]
    pair_rngs = rng.spawn(cfg.n_pairs)
    pairs = []
    for prng in pair_rngs:
        i, j = sample_parent_indices(scores, prng)
        pairs.append((elite[i], elite[j], prng))

    def run(pair):
        (m1, y1), (m2, y2), prng = pair
        return editor.edit(m1, y1, m2, y2, cfg.n_siblings, prng)

    workers = getattr(editor, "max_inflight", 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(run, pairs))
    else:
        batches = [run(p) for p in pairs]

    out: list[Molecule] = []
    seen: set[str] = set()
    for batch in batches:
        for mol in batch:
            if mol.canonical not in seen:
                seen.add(mol.canonical)
                out.append(mol)
    return out

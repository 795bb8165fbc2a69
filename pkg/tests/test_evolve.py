from collections import Counter
from itertools import product

import numpy as np
import pytest
from scipy.stats import chisquare

from mollibra.evolve import (EditorUnavailable, EvolveConfig, ExternalEditor, RuleEditor,
                             crossover_child, cuttable_bonds, edit_mol_rules, gen_offspring,
                             mutate, roulette_mass, sample_parent_indices, sample_parents,
                             select_elite)
from mollibra.molgraph import MolError, parse_smiles, validate

from peers import json_peer


def test_uniform_roulette_when_scores_equal():
    rng = np.random.default_rng(0)
    firsts = [sample_parent_indices([0.4] * 8, rng)[0] for _ in range(10_000)]
    counts = np.bincount(firsts, minlength=8)
    assert chisquare(counts).pvalue > 0.01


def test_dominant_score_frequency():
    scores = [0.0, 0.01, 0.02, 5.0]
    mass = roulette_mass(scores)
    rng = np.random.default_rng(1)
    firsts = [sample_parent_indices(scores, rng)[0] for _ in range(10_000)]
    assert abs(np.mean(np.asarray(firsts) == 3) - mass[3]) <= 0.02


def test_parents_distinct():
    rng = np.random.default_rng(2)
    elite = [(parse_smiles(s), y) for s, y in (("CCO", 1.0), ("CCN", 0.0), ("CCC", 0.5))]
    for _ in range(500):
        a, b = sample_parents(elite, rng)
        assert a != b


def _all_crossovers(p1, p2):
    out = set()
    for c1, s1, c2, s2 in product(cuttable_bonds(p1), (0, 1), cuttable_bonds(p2), (0, 1)):
        try:
            out.add(crossover_child(p1, c1, s1, p2, c2, s2).canonical)
        except MolError:
            pass
    return out


def test_crossover_children_come_from_enumerated_cuts():
    p1, p2 = parse_smiles("CCO"), parse_smiles("CCN")
    possible = _all_crossovers(p1, p2)
    union = Counter(a.element for a in p1.atoms) + Counter(a.element for a in p2.atoms)
    for seed in range(20):
        for child in edit_mol_rules(p1, p2, 5, np.random.default_rng(seed), mutation_rate=0.0):
            assert child.canonical in possible
            assert not Counter(a.element for a in child.atoms) - union


def test_ring_only_parents_fall_back_to_mutation():
    benzene = parse_smiles("c1ccccc1")
    assert cuttable_bonds(benzene) == []
    children = edit_mol_rules(benzene, benzene, 5, np.random.default_rng(3))
    assert children
    for c in children:
        validate(c)
        assert c != benzene


def test_children_valid_and_distinct(seed_pool):
    rng = np.random.default_rng(4)
    for i in range(0, 60, 2):
        kids = edit_mol_rules(seed_pool[i], seed_pool[i + 1], 5, rng)
        assert len(kids) <= 5
        assert len({k.canonical for k in kids}) == len(kids)
        for k in kids:
            validate(k)


@pytest.mark.parametrize("kind", ["substitute", "bond_order", "append", "delete"])
def test_each_mutation_keeps_valence(kind, seed_pool):
    rng = np.random.default_rng(5)
    made = 0
    for m in seed_pool[:80]:
        try:
            child = mutate(m, rng, kind)
        except MolError:
            continue
        validate(child)
        made += 1
    assert made > 10


def test_offspring_bound_and_validity(seed_pool):
    rng = np.random.default_rng(6)
    scored = [(m, float(rng.random())) for m in seed_pool[:40]]
    off = gen_offspring(scored, EvolveConfig(), RuleEditor(), np.random.default_rng(7))
    assert 0 < len(off) <= 50
    assert len({m.canonical for m in off}) == len(off)
    for m in off:
        validate(m)


def test_two_molecule_population(seed_pool):
    scored = [(seed_pool[0], 0.1), (seed_pool[1], 0.2)]
    seen = []

    class Recorder(RuleEditor):
        def edit(self, p1, y1, p2, y2, n, rng):
            seen.append({p1.canonical, p2.canonical})
            return super().edit(p1, y1, p2, y2, n, rng)

    gen_offspring(scored, EvolveConfig(), Recorder(), np.random.default_rng(8))
    assert len(seen) == 10
    assert all(s == {seed_pool[0].canonical, seed_pool[1].canonical} for s in seen)


def test_offspring_deterministic(seed_pool):
    scored = [(m, i / 40) for i, m in enumerate(seed_pool[:40])]
    a = gen_offspring(scored, EvolveConfig(), RuleEditor(), np.random.default_rng(9))
    b = gen_offspring(scored, EvolveConfig(), RuleEditor(), np.random.default_rng(9))
    assert [m.canonical for m in a] == [m.canonical for m in b]


def test_elite_is_stable_on_ties():
    mols = [parse_smiles(s) for s in ("C", "CC", "CCC", "CCCC")]
    elite = select_elite(list(zip(mols, (0.5, 0.9, 0.5, 0.5))), 3)
    assert [m.canonical for m, _ in elite] == ["CC", "C", "CCC"]


def test_config_bounds():
    with pytest.raises(ValueError):
        EvolveConfig(n_elite=1)
    with pytest.raises(ValueError):
        EvolveConfig(n_siblings=0)


def test_external_editor_echo_returns_parents(seed_pool):
    scored = [(seed_pool[0], 0.3), (seed_pool[1], 0.6)]
    echo = lambda req: (200, {"smiles": [p["smiles"] for p in req["parents"]]})
    with json_peer(echo) as (url, reqs):
        editor = ExternalEditor(url, "test task", max_inflight=3)
        off = gen_offspring(scored, EvolveConfig(), editor, np.random.default_rng(10))
    assert {m.canonical for m in off} == {seed_pool[0].canonical, seed_pool[1].canonical}
    assert len(reqs) == 10
    assert reqs[0]["n_siblings"] == 5
    assert {p["score"] for p in reqs[0]["parents"]} == {0.3, 0.6}


def test_external_editor_drops_invalid_smiles():
    p1, p2 = parse_smiles("CCO"), parse_smiles("CCN")
    with json_peer(lambda req: (200, {"smiles": ["CC(", "CCCl", "ClCC", "Xx"]})) as (url, _):
        kids = ExternalEditor(url).edit(p1, 0.1, p2, 0.2, 5, np.random.default_rng(0))
    assert [k.canonical for k in kids] == [parse_smiles("CCCl").canonical]


def test_external_editor_failure_paths():
    p1, p2 = parse_smiles("CCO"), parse_smiles("CCN")
    with json_peer(lambda req: (503, {"error": "busy"})) as (url, _):
        with pytest.raises(EditorUnavailable):
            ExternalEditor(url, fallback=None).edit(p1, 0, p2, 0, 3, np.random.default_rng(0))
        kids = ExternalEditor(url, fallback=RuleEditor()).edit(p1, 0, p2, 0, 3,
                                                               np.random.default_rng(0))
    assert kids

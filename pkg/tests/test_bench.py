import json
import math

import numpy as np
import pytest

from mollibra.bench import (IsomerOracle, MpoOracle, QedLiteOracle, SimilarityOracle, TASKS,
                            ablation_configs, critic_contribution, oracle_isomer, oracle_mpo,
                            oracle_similarity, read_trajectory, run_matrix, summarize_results,
                            top10_auc, write_report)
from mollibra.config import preset
from mollibra.critic import LengthMismatch
from mollibra.fingerprint import compute_fingerprint
from mollibra.molgraph import parse_smiles
from mollibra.surrogate import tanimoto_kernel


def brute_top10_auc(ys, k=10):
    total = 0.0
    for n in range(1, len(ys) + 1):
        top = sorted(ys[:n], reverse=True)[:k]
        total += sum(top) / len(top)
    return total / len(ys)


class Const:
    def __init__(self, v):
        self.v = v

    def evaluate(self, mol):
        return self.v


def test_similarity_oracle():
    target = parse_smiles("CC(C)(C)NCC(O)c1ccc(O)c(CO)c1")
    o = oracle_similarity(target)
    assert o.score(target) == 1.0
    other = parse_smiles("CC(C)NCC(O)c1ccccc1")
    direct = tanimoto_kernel(compute_fingerprint(other, "ecfp"), compute_fingerprint(target, "ecfp"))
    assert o.score(other) == direct
    assert o.calls == 2


def test_similarity_disjoint_is_zero():
    o = SimilarityOracle(parse_smiles("CCO"))
    assert o.evaluate(parse_smiles("ClCl")) == 0.0


def test_isomer_oracle():
    target = {"C": 10, "H": 22}
    o = oracle_isomer(target)
    assert o.score(parse_smiles("CCCCCCCCCC")) == 1.0
    # one extra carbon and two extra hydrogens over two target elements
    assert o.score(parse_smiles("CCCCCCCCCCC")) == pytest.approx(math.exp(-3 / 2))
    ten = {el: 1 for el in ("C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B")}
    o10 = IsomerOracle(ten)
    mol = parse_smiles("CC")  # C2H6
    dev = sum(abs(mol.formula().get(e, 0) - ten.get(e, 0)) for e in set(ten) | {"H"})
    assert o10.evaluate(mol) == pytest.approx(math.exp(-dev / 10))


def test_isomer_one_extra_carbon_on_ten_element_target():
    class Fake:
        def formula(self):
            return {"C": 2, "N": 1, "O": 1, "S": 1, "F": 1, "Cl": 1, "Br": 1, "I": 1, "P": 1, "B": 1}
    target = {"C": 1, "N": 1, "O": 1, "S": 1, "F": 1, "Cl": 1, "Br": 1, "I": 1, "P": 1, "B": 1}
    assert IsomerOracle(target).evaluate(Fake()) == pytest.approx(math.exp(-0.1))


def test_isomer_range(seed_pool):
    o = oracle_isomer({"C": 7, "H": 8, "N": 2, "O": 2})
    assert all(0 < o.evaluate(m) <= 1 for m in seed_pool)


def test_mpo_oracle():
    m = parse_smiles("CCO")
    assert oracle_mpo([(Const(0.25), 1.0), (Const(1.0), 1.0)]).score(m) == pytest.approx(0.5)
    assert MpoOracle([(Const(0.37), 2.0)]).evaluate(m) == pytest.approx(0.37)
    assert MpoOracle([(Const(0.0), 1.0), (Const(0.9), 1.0)]).evaluate(m) == 0.0
    with pytest.raises(ValueError):
        MpoOracle([(Const(0.5), 0.0)])


def test_qed_lite_range(seed_pool):
    o = QedLiteOracle()
    vals = [o.evaluate(m) for m in seed_pool]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert max(vals) > 0.5


def test_all_tasks_build(seed_pool):
    for task in TASKS.values():
        o = task.build()
        assert 0.0 <= o.evaluate(seed_pool[0]) <= 1.0
        assert o.calls == 0


def test_top10_auc_simple_cases():
    assert top10_auc([0.5] * 37, 37) == 0.5
    assert top10_auc([0.0] * 12, 12) == 0.0
    assert top10_auc([1.0] * 12, 12) == 1.0
    with pytest.raises(LengthMismatch):
        top10_auc([0.1, 0.2], 3)


def test_top10_auc_hand_case():
    ys = [0.1, 0.9, 0.3, 0.5, 0.2, 0.8, 0.7, 0.4, 0.6, 0.05, 0.95, 0.15]
    assert top10_auc(ys, 12) == pytest.approx(brute_top10_auc(ys), abs=1e-12)


def test_top10_auc_random_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        ys = list(rng.random(int(rng.integers(1, 60))))
        assert top10_auc(ys, len(ys)) == pytest.approx(brute_top10_auc(ys), abs=1e-12)


def test_top10_auc_monotone_and_order_sensitive():
    rng = np.random.default_rng(1)
    ys = list(rng.random(40))
    base = top10_auc(ys, 40)
    for i in range(40):
        raised = list(ys)
        raised[i] = min(1.0, raised[i] + 0.3)
        assert top10_auc(raised, 40) >= base
    best_first = sorted(ys, reverse=True)
    for _ in range(20):
        assert top10_auc(best_first, 40) >= top10_auc(list(rng.permutation(ys)), 40)


def _recs(scores, labels):
    out = []
    for n, (y, lab) in enumerate(zip(scores, labels), start=1):
        crit = lab == "critic"
        out.append({"n": n, "score": y, "critic_branch": crit,
                    "gp_kind": None if crit or lab is None else lab})
    return out


def test_contribution_accounting():
    recs = _recs([0.2, 0.3, 0.4, 0.6, 0.5, 0.9], [None, None, "ecfp", "critic", "ecfp", "boc"])
    shares = critic_contribution(recs, n_init=2)
    assert shares["ecfp"] == pytest.approx(0.1 / 0.6)
    assert shares["critic"] == pytest.approx(0.2 / 0.6)
    assert shares["boc"] == pytest.approx(0.3 / 0.6)
    assert sum(shares.values()) == pytest.approx(1.0)


def test_contribution_single_critic_and_no_improvement():
    assert critic_contribution(_recs([0.1, 0.5, 0.7], [None, "ecfp", "ecfp"]), 1) == {"ecfp": 1.0}
    flat = critic_contribution(_recs([0.9, 0.5, 0.7], [None, "ecfp", "critic"]), 1)
    assert flat and all(v == 0.0 for v in flat.values())


def test_ablation_grid_labels():
    grid = ablation_configs(preset("mollibra", budget=20))
    assert set(grid) == {"multi_fp+critic", "multi_fp", "single_fp+critic", "single_fp"}
    assert grid["single_fp"].fingerprints.enabled == ("ecfp",)
    assert grid["single_fp"].gating.mode == "off"
    assert grid["multi_fp+critic"].gating.mode == "corr"
    assert grid["single_fp"].config_hash() == preset("tripp_gp_bo", budget=20).config_hash()


def test_run_matrix_and_reports(tmp_path, seed_pool):
    cfg = preset("tripp_gp_bo", budget=18)
    cells = run_matrix(["albuterol_similarity", "qed_lite"], {"a": cfg, "b": cfg}, [0, 1],
                       tmp_path)
    assert len(cells) == 4
    by = {(c.task, c.label): c for c in cells}
    for task in ("albuterol_similarity", "qed_lite"):
        assert by[(task, "a")].aucs == by[(task, "b")].aucs
        assert len(by[(task, "a")].aucs) == 2
    for c in cells:
        for shares in c.contributions:
            total = sum(shares.values())
            assert total == pytest.approx(1.0, abs=1e-9) or total == 0.0
    jpath, cpath = write_report(cells, tmp_path)
    assert json.loads(jpath.read_text())[0]["n"] == 2
    assert cpath.read_text().splitlines()[0] == "task,a,b"
    rows = summarize_results(tmp_path)
    assert sorted(r["task"] for r in rows) == ["albuterol_similarity", "qed_lite"]
    for r in rows:
        assert r["n"] == 2
        cell = by[(r["task"], "a")]
        assert r["mean"] == pytest.approx(cell.mean, abs=1e-12)
        assert r["contributions"] == cell.contributions
    files = sorted(tmp_path.glob("*/*/*.jsonl"))
    assert len(files) == 4
    for f in files:
        assert len(read_trajectory(f)) == 18


def test_run_matrix_records_failures(tmp_path):
    cfg = preset("mollibra", budget=15).replace(critic=preset("mollibra").critic.__class__(
        mode="http", http_url="http://127.0.0.1:9/", timeout=0.5))
    cells = run_matrix(["albuterol_similarity"], [cfg], [0], tmp_path)
    # an unreachable critic degrades gracefully rather than failing the cell
    assert cells[0].errors == {} and len(cells[0].aucs) == 1


def test_run_matrix_requires_axes():
    with pytest.raises(ValueError):
        run_matrix([], [preset("mollibra", budget=20)], [0])

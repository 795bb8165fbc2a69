"""Analogue oracles, tasks, the Top-10 AUC metric and multi-run experiments."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib.resources import files
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .critic import ExternalHttpCritic, LengthMismatch, NullCritic, SyntheticAligner, ZeroShotCritic
from .engine import RunRecord, run
from .evolve import ExternalEditor, RuleEditor
from .fingerprint import FingerprintKind, compute_fingerprint
from .molgraph import Molecule, parse_smiles, read_smiles_file
from .surrogate import tanimoto_kernel

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

class Oracle:
    """Deterministic scorer in [0, 1].

    :meth:`score` is the budgeted call and increments :attr:`calls`;
    :meth:`evaluate` is the same function without accounting, for analysis
    and for critics that need a hidden target.
    """

    name = "oracle"

    def __init__(self) -> None:
        self.calls = 0

    def evaluate(self, mol: Molecule) -> float:
        raise NotImplementedError

    def score(self, mol: Molecule) -> float:
        self.calls += 1
        return self.evaluate(mol)


class SimilarityOracle(Oracle):
    name = "similarity"

    def __init__(self, target: Molecule):
        super().__init__()
        self.target = target
        self._target_fp = compute_fingerprint(target, FingerprintKind.ECFP)

    def evaluate(self, mol):
        return tanimoto_kernel(compute_fingerprint(mol, FingerprintKind.ECFP), self._target_fp)


class IsomerOracle(Oracle):
    """``exp(-mean |count - target|)`` over the target's elements, hydrogen included.

    Elements absent from the target still add to the deviation sum; the
    mean divides by the number of target elements.
    """

    name = "isomer"

    def __init__(self, formula: Mapping[str, int]):
        super().__init__()
        if not formula:
            raise ValueError("empty target formula")
        self.formula = dict(formula)

    def evaluate(self, mol):
        have = mol.formula()
        elements = set(self.formula) | set(have)
        dev = sum(abs(have.get(e, 0) - self.formula.get(e, 0)) for e in elements)
        return math.exp(-dev / len(self.formula))


class MpoOracle(Oracle):
    """Weighted geometric mean of component oracles, clamped to [0, 1]."""

    name = "mpo"

    def __init__(self, components: Sequence[tuple[Oracle, float]]):
        super().__init__()
        if not components or any(w <= 0 for _, w in components):
            raise ValueError("need at least one component with positive weight")
        self.components = list(components)

    def evaluate(self, mol):
        total = sum(w for _, w in self.components)
        acc = 0.0
        for oracle, w in self.components:
            s = oracle.evaluate(mol)
            if s <= 0.0:
                return 0.0
            acc += w * math.log(s)
        return min(1.0, max(0.0, math.exp(acc / total)))


def _desirability(x: float, lo: float, hi: float, width: float) -> float:
    rise = 1.0 / (1.0 + math.exp(-(x - lo) / width))
    fall = 1.0 / (1.0 + math.exp(-(hi - x) / width))
    return rise * fall


@dataclass(frozen=True)
class QedLiteParams:
    atoms: tuple[float, float, float] = (12.0, 35.0, 2.0)
    rings: tuple[float, float, float] = (0.5, 4.5, 0.5)
    hetero_fraction: tuple[float, float, float] = (0.1, 0.45, 0.05)


class QedLiteOracle(Oracle):
    """Drug-likeness analogue: product of logistic windows on size, rings, heteroatoms."""

    name = "qed_lite"

    def __init__(self, params: QedLiteParams | None = None):
        super().__init__()
        self.params = params or QedLiteParams()

    def evaluate(self, mol):
        p = self.params
        n = len(mol.atoms)
        hetero = sum(a.element != "C" for a in mol.atoms) / n
        return (_desirability(n, *p.atoms) * _desirability(mol.ring_count, *p.rings)
                * _desirability(hetero, *p.hetero_fraction))


def oracle_similarity(target: Molecule) -> Oracle:
    return SimilarityOracle(target)


def oracle_isomer(formula: Mapping[str, int]) -> Oracle:
    return IsomerOracle(formula)


def oracle_mpo(components: Sequence[tuple[Oracle, float]]) -> Oracle:
    return MpoOracle(components)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

ALBUTEROL = "CC(C)(C)NCC(O)c1ccc(O)c(CO)c1"
AMLODIPINE = "CCOC(=O)C1=C(COCCN)NC(C)=C(C1c1ccccc1Cl)C(=O)OC"
CELECOXIB = "Cc1ccc(cc1)-c1cc(nn1-c1ccc(cc1)S(N)(=O)=O)C(F)(F)F"


@dataclass(frozen=True)
class Task:
    name: str
    description: str
    build: Callable[[], Oracle]


TASKS: dict[str, Task] = {
    "albuterol_similarity": Task(
        "albuterol_similarity", "Beta-2 adrenergic receptor agonists",
        lambda: oracle_similarity(parse_smiles(ALBUTEROL))),
    "celecoxib_similarity": Task(
        "celecoxib_similarity", "Inhibition of cyclooxygenase-2",
        lambda: oracle_similarity(parse_smiles(CELECOXIB))),
    "amlodipine_mpo": Task(
        "amlodipine_mpo", "Inhibition of the L-type calcium channel",
        lambda: oracle_mpo([(oracle_similarity(parse_smiles(AMLODIPINE)), 1.0),
                            (QedLiteOracle(), 1.0)])),
    "isomer_c7h8n2o2": Task(
        "isomer_c7h8n2o2", "",
        lambda: oracle_isomer({"C": 7, "H": 8, "N": 2, "O": 2})),
    "qed_lite": Task(
        "qed_lite", "Quantitative Estimate of Drug-likeness (QED)", QedLiteOracle),
}


def get_task(name: str) -> Task:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


@lru_cache(maxsize=None)
def _seed_pool_cached() -> tuple[Molecule, ...]:
    path = files("mollibra") / "data" / "seeds.smi"
    return tuple(parse_smiles(s) for s in read_smiles_file(path))


def load_seed_pool(path: str | Path | None = None) -> list[Molecule]:
    """The bundled seed molecules, or those of a custom SMILES file."""
    if path is None:
        return list(_seed_pool_cached())
    return [parse_smiles(s) for s in read_smiles_file(path)]


def build_critic(cfg: RunConfig, oracle: Oracle, seed_pool: Sequence[Molecule]) -> ZeroShotCritic:
    mode = cfg.critic.mode
    if mode == "synthetic":
        return SyntheticAligner(oracle.evaluate, seed_pool, cfg.critic.synthetic_rho, cfg.seed)
    if mode == "http":
        desc = cfg.critic.task_description
        if desc is None:
            desc = get_task(cfg.task).description
        return ExternalHttpCritic(cfg.critic.http_url, desc, cfg.critic.timeout)
    return NullCritic()


def build_editor(cfg: RunConfig):
    rules = RuleEditor(cfg.evolve.mutation_rate, cfg.evolve.max_atoms, cfg.evolve.max_attempts)
    if cfg.editor.mode == "rules":
        return rules
    return ExternalEditor(cfg.editor.http_url, get_task(cfg.task).description,
                          cfg.editor.timeout, rules if cfg.editor.fallback_rules else None,
                          cfg.editor.max_inflight)


def run_task(cfg: RunConfig, out_path: str | Path | None = None,
             seed_pool: Sequence[Molecule] | None = None) -> RunRecord:
    """Build oracle, editor and critic for ``cfg.task`` and execute one run."""
    oracle = get_task(cfg.task).build()
    pool = list(seed_pool) if seed_pool is not None else load_seed_pool()
    critic = build_critic(cfg, oracle, pool) if cfg.gating.mode != "off" else None
    record = run(cfg, oracle, build_editor(cfg), critic, pool, out_path=out_path)
    if record.oracle_calls != cfg.budget:
        raise RuntimeError(f"made {record.oracle_calls} oracle calls, budget {cfg.budget}")
    return record


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def top10_auc(trajectory: Sequence[float], budget: int, k: int = 10) -> float:
    """Mean over prefixes n = 1..N of the mean of the top-min(k, n) scores."""
    ys = [float(v) for v in trajectory]
    if len(ys) != budget:
        raise LengthMismatch(f"trajectory has {len(ys)} scores, budget is {budget}")
    if budget == 0:
        return 0.0
    top: list[float] = []
    total = 0.0
    for n, y in enumerate(ys, start=1):
        if len(top) < k:
            top.append(y)
            top.sort()
        elif y > top[0]:
            top[0] = y
            top.sort()
        total += sum(top) / len(top)
    return total / budget


def record_label(rec: Mapping[str, Any]) -> str:
    """Which ranker put this call first: ``critic``, a GP kind, or ``unranked``."""
    if rec.get("critic_branch"):
        return "critic"
    return rec.get("gp_kind") or "unranked"


def critic_contribution(trajectory: Sequence[Mapping[str, Any]], n_init: int) -> dict[str, float]:
    """Share of incumbent improvement credited to each ranker after initialization.

    Shares sum to 1, or every share is 0 when nothing improved.
    """
    recs = sorted(trajectory, key=lambda r: r["n"])
    if not recs:
        return {}
    labels = sorted({record_label(r) for r in recs[n_init:]})
    credit = dict.fromkeys(labels, 0.0)
    incumbent = max((r["score"] for r in recs[:n_init]), default=-math.inf)
    for r in recs[n_init:]:
        if r["score"] > incumbent:
            if incumbent > -math.inf:
                credit[record_label(r)] += r["score"] - incumbent
            incumbent = r["score"]
    total = sum(credit.values())
    if total <= 0:
        return dict.fromkeys(labels, 0.0)
    return {k: v / total for k, v in credit.items()}


# ---------------------------------------------------------------------------
# experiment matrix
# ---------------------------------------------------------------------------

def run_path(results_dir: str | Path, cfg: RunConfig) -> Path:
    return Path(results_dir) / cfg.task / cfg.config_hash() / f"{cfg.seed}.jsonl"


def write_meta(path: Path, cfg: RunConfig, record: RunRecord) -> None:
    meta = {
        "task": cfg.task, "seed": cfg.seed, "config_hash": cfg.config_hash(),
        "budget": cfg.budget, "n_init": cfg.n_init, "oracle_calls": record.oracle_calls,
        "stalls": record.stalls, "config": cfg.to_dict(),
    }
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")


@dataclass
class CellResult:
    task: str
    label: str
    config_hash: str
    seeds: list[int] = field(default_factory=list)
    aucs: list[float] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)
    contributions: list[dict[str, float]] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.aucs)) if self.aucs else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.aucs)) if self.aucs else float("nan")

    def to_dict(self) -> dict[str, Any]:
        return {"task": self.task, "config": self.label, "config_hash": self.config_hash,
                "n": len(self.aucs), "mean": self.mean, "std": self.std,
                "per_seed": dict(zip(self.seeds, self.aucs)),
                "errors": self.errors, "contributions": self.contributions}


def _execute(job: tuple[RunConfig, str | None]) -> tuple[list[dict] | None, str | None]:
    cfg, results_dir = job
    try:
        path = run_path(results_dir, cfg) if results_dir else None
        record = run_task(cfg, path)
        if path:
            write_meta(path, cfg, record)
        return [json.loads(r.to_json()) for r in record.records], None
    except Exception as exc:  # a failed cell must not stop the matrix
        logger.exception("run %s seed %d failed", cfg.task, cfg.seed)
        return None, f"{type(exc).__name__}: {exc}"


def run_matrix(tasks: Sequence[str], configs: Mapping[str, RunConfig] | Sequence[RunConfig],
               seeds: Sequence[int], results_dir: str | Path | None = None,
               jobs: int = 1) -> list[CellResult]:
    """Run every (task, config, seed) cell and aggregate Top-10 AUC per (task, config)."""
    if not tasks or not configs or not seeds:
        raise ValueError("tasks, configs and seeds must all be non-empty")
    if not isinstance(configs, Mapping):
        configs = {f"config{i}": c for i, c in enumerate(configs)}
    for t in tasks:
        get_task(t)
    cells: list[CellResult] = []
    jobs_list = []
    for task in tasks:
        for label, base in configs.items():
            cfg0 = base.replace(task=task)
            cell = CellResult(task, label, cfg0.config_hash())
            cells.append(cell)
            for seed in seeds:
                jobs_list.append((cell, cfg0.replace(seed=int(seed))))
    payload = [(cfg, str(results_dir) if results_dir else None) for _, cfg in jobs_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_execute, payload))
    else:
        outcomes = [_execute(p) for p in payload]
    for (cell, cfg), (records, err) in zip(jobs_list, outcomes):
        if err is not None:
            cell.errors[cfg.seed] = err
            continue
        cell.seeds.append(cfg.seed)
        cell.aucs.append(top10_auc([r["score"] for r in records], cfg.budget))
        cell.contributions.append(critic_contribution(records, cfg.n_init))
    return cells


ABLATION_LABELS = {
    (True, True): "multi_fp+critic",
    (True, False): "multi_fp",
    (False, True): "single_fp+critic",
    (False, False): "single_fp",
}


def ablation_configs(base: RunConfig) -> dict[str, RunConfig]:
    """The 2x2 grid over {all fingerprint kinds vs ECFP only} x {critic on vs off}."""
    from .config import CriticSettings, FingerprintConfig, GatingSettings
    out = {}
    for (multi, crit), label in ABLATION_LABELS.items():
        fp = base.fingerprints if multi else FingerprintConfig(
            ("ecfp",), base.fingerprints.ecfp_radius, base.fingerprints.path_max_len)
        gating = base.gating if crit else GatingSettings("off")
        critic = base.critic if crit else CriticSettings(mode="null")
        if crit and gating.mode == "off":
            gating = GatingSettings("corr")
        out[label] = base.replace(fingerprints=fp, gating=gating, critic=critic)
    return out


def write_report(cells: Sequence[CellResult], out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    """JSON summary plus a CSV with one row per task and one column per config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps([c.to_dict() for c in cells], indent=2) + "\n")
    labels = list(dict.fromkeys(c.label for c in cells))
    tasks = list(dict.fromkeys(c.task for c in cells))
    by_key = {(c.task, c.label): c for c in cells}
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task"] + labels)
        for t in tasks:
            row = [t]
            for lab in labels:
                c = by_key.get((t, lab))
                row.append("" if c is None or not c.aucs else f"{c.mean:.3f} ± {c.std:.3f}")
            w.writerow(row)
    return json_path, csv_path


class MalformedResults(ValueError):
    pass


_REQUIRED = ("n", "smiles", "score", "critic_branch", "gp_kind", "rho", "weights")


def read_trajectory(path: str | Path) -> list[dict[str, Any]]:
    recs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedResults(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(rec, dict) or any(k not in rec for k in _REQUIRED):
                raise MalformedResults(f"{path}:{lineno}: missing trajectory fields")
            recs.append(rec)
    return recs


def summarize_results(results_dir: str | Path) -> list[dict[str, Any]]:
    """Aggregate every ``<task>/<hash>/<seed>.jsonl`` under a results directory."""
    root = Path(results_dir)
    if not root.is_dir():
        raise MalformedResults(f"{root} is not a directory")
    groups: dict[tuple[str, str], dict[str, Any]] = {}
    for path in sorted(root.glob("*/*/*.jsonl")):
        task, chash = path.parent.parent.name, path.parent.name
        recs = read_trajectory(path)
        meta_path = path.with_suffix(".meta.json")
        try:
            meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        except json.JSONDecodeError as exc:
            raise MalformedResults(f"{meta_path}: {exc}") from exc
        n_init = int(meta.get("n_init", 10))
        budget = int(meta.get("budget", len(recs)))
        g = groups.setdefault((task, chash), {"task": task, "config_hash": chash, "seeds": [],
                                              "aucs": [], "contributions": [], "stalls": 0})
        g["seeds"].append(path.stem)
        g["aucs"].append(top10_auc([r["score"] for r in recs], budget))
        g["contributions"].append(critic_contribution(recs, n_init))
        g["stalls"] += len(meta.get("stalls", []))
    rows = []
    for g in groups.values():
        a = np.asarray(g["aucs"])
        rows.append({"task": g["task"], "config_hash": g["config_hash"], "n": len(a),
                     "mean": float(a.mean()), "std": float(a.std()),
                     "per_seed": dict(zip(g["seeds"], g["aucs"])),
                     "contributions": g["contributions"], "stall_events": g["stalls"]})
    return rows

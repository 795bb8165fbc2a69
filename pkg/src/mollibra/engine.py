"""The optimization loop: initialization, generations, oracle calls and pool upkeep."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Iterable, Protocol, Sequence

import numpy as np

from .config import RunConfig
from .critic import (CriticUnavailable, Selection, ZeroShotCritic, gate_llimbo, gate_probability,
                     pre_evaluate, spearman)
from .evolve import Editor, gen_offspring
from .fingerprint import Featurizer, FingerprintKind
from .surrogate import (EnsembleState, GpModel, SingularKernel, ensemble_poe,
                        expected_improvement, fit_gp, update_weights)
from .molgraph import Molecule

logger = logging.getLogger(__name__)


class SeedPoolTooSmall(ValueError):
    pass


class SearchExhausted(RuntimeError):
    """No unscored molecule is left to propose."""


class Oracle(Protocol):
    calls: int

    def score(self, mol: Molecule) -> float: ...


@dataclass(frozen=True)
class ScoredRecord:
    n: int
    mol: Molecule
    y: float
    critic_branch: bool = False
    gp_kind: str | None = None
    rho: float | None = None
    weights: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n, "smiles": self.mol.canonical, "score": self.y,
            "critic_branch": self.critic_branch, "gp_kind": self.gp_kind,
            "rho": self.rho, "weights": self.weights,
        })


class ScoredSet:
    """Oracle-scored molecules in call order, indexed by canonical SMILES."""

    def __init__(self) -> None:
        self.records: list[ScoredRecord] = []
        self._index: set[str] = set()

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, mol: Molecule) -> bool:
        return mol.canonical in self._index

    def add(self, record: ScoredRecord) -> None:
        if record.mol.canonical in self._index:
            raise ValueError(f"{record.mol.canonical} was already scored")
        if record.n != len(self.records) + 1:
            raise ValueError("call indices must increase by one")
        self.records.append(record)
        self._index.add(record.mol.canonical)

    @property
    def molecules(self) -> list[Molecule]:
        return [r.mol for r in self.records]

    @property
    def scores(self) -> np.ndarray:
        return np.asarray([r.y for r in self.records], dtype=float)

    def pairs(self) -> list[tuple[Molecule, float]]:
        return [(r.mol, r.y) for r in self.records]


class CandidatePool:
    """Unevaluated molecules carried across generations."""

    def __init__(self, capacity: int) -> None:
        self.capacity = capacity
        self.members: list[Molecule] = []
        self._index: set[str] = set()

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, mol: Molecule) -> bool:
        return mol.canonical in self._index

    def extend(self, mols: Iterable[Molecule]) -> None:
        for m in mols:
            if m.canonical not in self._index:
                self.members.append(m)
                self._index.add(m.canonical)

    def replace(self, ordered: Sequence[Molecule]) -> None:
        """Keep ``ordered`` (best first), truncated to capacity."""
        self.members = list(ordered[:self.capacity])
        self._index = {m.canonical for m in self.members}


@dataclass
class RunRecord:
    config: RunConfig
    records: list[ScoredRecord]
    oracle_calls: int
    stalls: list[int]
    generations: list[dict] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def scores(self) -> list[float]:
        return [r.y for r in self.records]

    def best(self) -> ScoredRecord:
        return max(self.records, key=lambda r: r.y)


def initialize(cfg: RunConfig, seed_pool: Sequence[Molecule], oracle: Oracle,
               rng: np.random.Generator, emit: Callable[[ScoredRecord], None] | None = None,
               weights: dict[str, float] | None = None) -> ScoredSet:
    """Score ``n_init`` distinct seed molecules drawn uniformly without replacement."""
    unique = list(dict.fromkeys(seed_pool))
    if len(unique) < cfg.n_init:
        raise SeedPoolTooSmall(f"seed pool has {len(unique)} molecules, need {cfg.n_init}")
    scored = ScoredSet()
    for i in rng.choice(len(unique), cfg.n_init, replace=False):
        mol = unique[int(i)]
        rec = ScoredRecord(len(scored) + 1, mol, float(oracle.score(mol)),
                           weights=dict(weights or {}))
        scored.add(rec)
        if emit:
            emit(rec)
    return scored


def fit_surrogate(scored: ScoredSet, kinds: Sequence[FingerprintKind], featurizer: Featurizer,
                  gp_config=None) -> list[GpModel | None]:
    """One GP per kind on the full scored set; a kind that fails to fit is ``None``."""
    y = scored.scores
    models: list[GpModel | None] = []
    for kind in kinds:
        data = [(featurizer.compute(m, kind), v) for m, v in zip(scored.molecules, y)]
        try:
            models.append(fit_gp(data, gp_config))
        except SingularKernel as exc:
            logger.warning("GP fit failed for %s: %s", kind.value, exc)
            models.append(None)
    return models


class _Trajectory:
    """Append-only JSONL writer, flushed after every oracle call."""

    def __init__(self, path: str | Path | None) -> None:
        self._fh: IO[str] | None = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")

    def write(self, rec: ScoredRecord) -> None:
        if self._fh:
            self._fh.write(rec.to_json() + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()


def run(cfg: RunConfig, oracle: Oracle, editor: Editor, critic: ZeroShotCritic | None,
        seed_pool: Sequence[Molecule], *, out_path: str | Path | None = None,
        featurizer: Featurizer | None = None) -> RunRecord:
    """Execute one optimization run with exactly ``cfg.budget`` oracle calls."""
    kinds = cfg.fingerprints.kinds()
    featurizer = featurizer or Featurizer(kinds, cfg.fingerprints.params())
    gp_config = cfg.gp.to_gp_config()
    root = np.random.default_rng(cfg.seed)
    init_rng, evolve_rng, select_rng, stall_rng = root.spawn(4)
    state = EnsembleState.uniform(len(kinds), cfg.ensemble.weight_floor)
    use_critic = cfg.ranking == "gp" and cfg.gating.mode != "off" and critic is not None

    def weight_map() -> dict[str, float]:
        return {k.value: w for k, w in zip(kinds, state.weights)}

    out = _Trajectory(out_path)
    stalls: list[int] = []
    generations: list[dict] = []
    calls_before = oracle.calls
    try:
        scored = initialize(cfg, seed_pool, oracle, init_rng, out.write, weight_map())
        pool = CandidatePool(cfg.n_cand)
        generation = 0
        while len(scored) < cfg.budget:
            generation += 1
            offspring = gen_offspring(scored.pairs(), cfg.evolve, editor, evolve_rng)
            fresh = [m for m in offspring if m not in scored and m not in pool]
            if not fresh:
                fresh = _stall_draw(seed_pool, scored, pool, stall_rng)
                stalls.append(generation)
                logger.info("generation %d produced no new candidates; injected %s",
                            generation, fresh[0].canonical)
            pool.extend(fresh)
            cand = list(pool.members)

            rho = None
            models: list[GpModel | None] = []
            if cfg.ranking == "gp":
                models = fit_surrogate(scored, kinds, featurizer, gp_config)
                order, rho = _rank_gp(cfg, cand, scored, models, state, critic if use_critic else None,
                                      featurizer, select_rng)
            elif cfg.ranking == "random":
                order = [Selection(int(i), False, None) for i in select_rng.permutation(len(cand))]
            else:
                order = [Selection(i, False, None) for i in range(len(cand))]

            used = set()
            for sel in order[:cfg.n_batch]:
                if len(scored) >= cfg.budget:
                    break
                mol = cand[sel.index]
                if sel.critic_branch:
                    label = None
                elif sel.model is None:
                    label = None
                elif cfg.ensemble.mode == "poe":
                    label = "poe"
                else:
                    label = kinds[sel.model].value
                rec = ScoredRecord(len(scored) + 1, mol, float(oracle.score(mol)),
                                   sel.critic_branch, label, rho, weight_map())
                scored.add(rec)
                out.write(rec)
                used.add(sel.index)
                if cfg.ranking == "gp" and cfg.ensemble.mode == "selection":
                    fps = {k: featurizer.compute(mol, k) for k in kinds}
                    state = update_weights(state, models, (fps, rec.y))
            pool.replace([cand[s.index] for s in order if s.index not in used])
            generations.append({"generation": generation, "n_train": len(scored) - len(used),
                                "n_candidates": len(cand), "pool_size": len(pool)})
    finally:
        out.close()
    return RunRecord(cfg, list(scored.records), oracle.calls - calls_before, stalls, generations)


def _stall_draw(seed_pool: Sequence[Molecule], scored: ScoredSet, pool: CandidatePool,
                rng: np.random.Generator) -> list[Molecule]:
    options = [m for m in dict.fromkeys(seed_pool) if m not in scored and m not in pool]
    if not options:
        raise SearchExhausted("no unscored molecule left in the seed pool")
    return [options[int(rng.integers(len(options)))]]


def _rank_gp(cfg: RunConfig, cand: list[Molecule], scored: ScoredSet,
             models: list[GpModel | None], state: EnsembleState,
             critic: ZeroShotCritic | None, featurizer: Featurizer,
             rng: np.random.Generator) -> tuple[list[Selection], float | None]:
    kinds = cfg.fingerprints.kinds()
    fitted = [i for i, gp in enumerate(models) if gp is not None]
    y_best = float(np.max(scored.scores))
    fps = {kinds[i]: [featurizer.compute(m, kinds[i]) for m in cand] for i in fitted}

    if cfg.ensemble.mode == "poe":
        mu, var = ensemble_poe([models[i] for i in fitted], fps)
        acq = expected_improvement(mu, var, y_best)[None, :]
        weights = np.ones(1)
    else:
        acq = np.zeros((len(models), len(cand)))
        for i in fitted:
            mu, var = models[i].predict(fps[kinds[i]])
            acq[i] = expected_improvement(mu, var, y_best)
        weights = np.zeros(len(models))
        weights[fitted] = state.as_array()[fitted]
        if weights.sum() == 0:
            weights[:] = 1.0

    rho = None
    gate = 0.0
    crit = None
    if critic is not None:
        try:
            crit_scored = critic.score_many(scored.molecules)
            crit = critic.score_many(cand)
        except CriticUnavailable as exc:
            logger.warning("critic unavailable this generation: %s", exc)
            crit = None
        if crit is not None:
            rho = spearman(scored.scores, crit_scored)
            if cfg.gating.mode == "corr":
                gate = gate_probability(rho)
            else:
                best = int(np.argmax(weights))
                gate = gate_llimbo(crit, acq[best])
    order = pre_evaluate(len(cand), critic_scores=crit, gate_prob=gate, acquisition=acq,
                         weights=weights, rng=rng)
    return order, rho

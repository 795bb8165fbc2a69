"""Zero-shot critics, rank-correlation gating and candidate pre-evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .molgraph import Molecule

logger = logging.getLogger(__name__)


class LengthMismatch(ValueError):
    pass


class CriticUnavailable(RuntimeError):
    """The critic could not score this batch (peer failure, bad payload)."""


# ---------------------------------------------------------------------------
# rank correlation
# ---------------------------------------------------------------------------

def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(ys: Sequence[float], ss: Sequence[float]) -> float | None:
    """Spearman correlation with average-rank ties; ``None`` when undefined."""
    if len(ys) != len(ss):
        raise LengthMismatch(f"{len(ys)} oracle scores vs {len(ss)} critic scores")
    if len(ys) < 2:
        return None
    ry, rs = average_ranks(ys), average_ranks(ss)
    ry -= ry.mean()
    rs -= rs.mean()
    denom = math.sqrt(float(ry @ ry) * float(rs @ rs))
    if denom == 0.0:
        return None
    return float(np.clip((ry @ rs) / denom, -1.0, 1.0))


def gate_probability(rho: float | None) -> float:
    """Probability of trusting the critic: ``clip(rho, 0, 1)``, 0 when undefined."""
    if rho is None or not math.isfinite(rho):
        return 0.0
    return min(max(rho, 0.0), 1.0)


# ---------------------------------------------------------------------------
# critics
# ---------------------------------------------------------------------------

class ZeroShotCritic:
    """Scores molecules without task-specific training data.

    Subclasses implement :meth:`_score_batch`; results are cached per
    canonical SMILES.
    """

    name = "critic"

    def __init__(self) -> None:
        self._cache: dict[str, float] = {}

    def _score_batch(self, mols: Sequence[Molecule]) -> list[float]:
        raise NotImplementedError

    def score(self, mol: Molecule) -> float:
        return float(self.score_many([mol])[0])

    def score_many(self, mols: Sequence[Molecule]) -> np.ndarray:
        missing = []
        seen = set()
        for m in mols:
            if m.canonical not in self._cache and m.canonical not in seen:
                missing.append(m)
                seen.add(m.canonical)
        if missing:
            scores = self._score_batch(missing)
            for m, s in zip(missing, scores):
                self._cache[m.canonical] = float(s)
        return np.asarray([self._cache[m.canonical] for m in mols], dtype=float)


class NullCritic(ZeroShotCritic):
    """Always 0, so its rank correlation is undefined and it is never trusted."""

    name = "null"

    def _score_batch(self, mols):
        return [0.0] * len(mols)


def _hash_uniform(text: str) -> float:
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return (int.from_bytes(digest, "little") + 0.5) / 2.0 ** 64


class SyntheticAligner(ZeroShotCritic):
    """Stand-in for a text-molecule aligned model with a tunable rank correlation.

    The hidden target is mapped to normal scores by its rank within a
    reference population (linearly extended past the observed range) and
    blended with seeded per-molecule hash noise. The blend coefficient
    ``2 sin(pi * rho / 6)`` makes the Spearman correlation with the target
    equal ``rho_true`` for a Gaussian copula.
    """

    name = "synthetic"

    def __init__(self, target: Callable[[Molecule], float], reference: Sequence[Molecule],
                 rho_true: float = 0.8, seed: int = 0):
        super().__init__()
        if not 0.0 <= rho_true <= 1.0:
            raise ValueError("rho_true must lie in [0, 1]")
        if len(reference) < 2:
            raise ValueError("reference population needs at least two molecules")
        self.target = target
        self.rho_true = rho_true
        self.seed = seed
        # snap to exactly 1 so rho_true = 1 carries no residual noise
        coef = 2.0 * math.sin(math.pi * rho_true / 6.0)
        self.coef = 1.0 if coef > 1.0 - 1e-12 else coef
        t = np.asarray([target(m) for m in reference], dtype=float)
        ranks = average_ranks(t)
        q = ndtri((ranks - 0.5) / len(t))
        knots_t, idx = np.unique(t, return_index=True)
        self._knots_t = knots_t
        self._knots_q = q[idx]
        std = float(np.std(t))
        self._slope = 1.0 / std if std > 0 else 1.0

    def normal_score(self, t: float) -> float:
        kt, kq = self._knots_t, self._knots_q
        if len(kt) == 1:
            return (t - kt[0]) * self._slope
        if t < kt[0]:
            return float(kq[0] - (kt[0] - t) * self._slope)
        if t > kt[-1]:
            return float(kq[-1] + (t - kt[-1]) * self._slope)
        return float(np.interp(t, kt, kq))

    def noise(self, mol: Molecule) -> float:
        return float(ndtri(_hash_uniform(f"{self.seed}:{mol.canonical}")))

    def _score_batch(self, mols):
        c = self.coef
        s = math.sqrt(max(0.0, 1.0 - c * c))
        return [c * self.normal_score(self.target(m)) + s * self.noise(m) for m in mols]


class ExternalHttpCritic(ZeroShotCritic):
    """Critic served by an HTTP peer.

    Request ``{"task_description": str, "smiles": [...]}``, response
    ``{"scores": [...]}`` aligned by index. Any failure raises
    :class:`CriticUnavailable`; nothing is cached for a failed batch.
    """

    name = "http"

    def __init__(self, url: str, task_description: str = "", timeout: float = 10.0):
        super().__init__()
        self.url = url
        self.task_description = task_description
        self.timeout = timeout

    def _score_batch(self, mols):
        payload = {"task_description": self.task_description,
                   "smiles": [m.canonical for m in mols]}
        try:
            body = _post_json(self.url, payload, self.timeout)
            scores = body["scores"]
            if not isinstance(scores, list) or len(scores) != len(mols):
                raise ValueError("score list does not match request")
            values = [float(v) for v in scores]
            if not all(math.isfinite(v) for v in values):
                raise ValueError("non-finite score")
            return values
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CriticUnavailable(f"critic peer {self.url} failed: {exc}") from exc


def _post_json(url: str, payload: dict, timeout: float) -> dict:
    data = json.dumps(payload).encode()
    req = urllib.request.Request(url, data=data, method="POST",
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        if resp.status != 200:
            raise ValueError(f"HTTP {resp.status}")
        body = json.loads(resp.read().decode())
    if not isinstance(body, dict):
        raise ValueError("response is not a JSON object")
    return body


# ---------------------------------------------------------------------------
# pre-evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Selection:
    index: int
    critic_branch: bool
    model: int | None


def pre_evaluate(n: int, *, critic_scores: np.ndarray | None, gate_prob: float,
                 acquisition: np.ndarray | None, weights: Sequence[float],
                 rng: np.random.Generator) -> list[Selection]:
    """Rank ``n`` candidates by per-rank critic selection.

    At each rank a uniform draw below ``gate_prob`` takes the best remaining
    candidate by critic score; otherwise a model is drawn from ``weights``
    and its best remaining candidate by ``acquisition[model]`` is taken.
    """
    if n == 0:
        return []
    w = np.asarray(weights, dtype=float)
    cum = np.cumsum(w) / w.sum()
    acq = None if acquisition is None else np.atleast_2d(np.asarray(acquisition, dtype=float))
    crit = None if critic_scores is None else np.asarray(critic_scores, dtype=float)
    remaining = np.ones(n, dtype=bool)
    out: list[Selection] = []
    for _ in range(n):
        u = rng.random()
        if crit is not None and u < gate_prob:
            idx = int(np.argmax(np.where(remaining, crit, -np.inf)))
            out.append(Selection(idx, True, None))
        else:
            m = min(int(np.searchsorted(cum, rng.random(), side="right")), len(cum) - 1)
            if acq is None:
                idx = int(np.argmax(remaining))
            else:
                idx = int(np.argmax(np.where(remaining, acq[m], -np.inf)))
            out.append(Selection(idx, False, m))
        remaining[idx] = False
    assert sorted(s.index for s in out) == list(range(n)), "pre_evaluate must permute"
    return out


def gate_llimbo(critic_scores: Sequence[float], acquisition: Sequence[float]) -> float:
    """Quantile of the critic's favourite candidate within one model's EI ranking.

    Fraction of candidates with strictly lower acquisition plus half the
    tied fraction (the candidate itself included).
    """
    crit = np.asarray(critic_scores, dtype=float)
    acq = np.asarray(acquisition, dtype=float)
    if len(crit) == 0 or len(crit) != len(acq):
        raise LengthMismatch("critic and acquisition vectors must be non-empty and aligned")
    value = acq[int(np.argmax(crit))]
    below = np.sum(acq < value)
    ties = np.sum(acq == value)
    return float((below + 0.5 * ties) / len(acq))

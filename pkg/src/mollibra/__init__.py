"""Genetic molecular optimization with multi-fingerprint GP pre-evaluation and a gated critic."""

from .bench import top10_auc
from .config import RunConfig, load_config, preset
from .engine import RunRecord, run
from .molgraph import Molecule, parse_smiles, to_canonical_smiles

__all__ = ["Molecule", "RunConfig", "RunRecord", "load_config", "parse_smiles", "preset", "run",
           "to_canonical_smiles", "top10_auc"]
__version__ = "0.1.0"

"""Two-agent ensemble over a pool of multiple-choice answerers: a Decider picks a
diverse team, an Aggregator fuses its answers."""
from ._accel import USE_NUMBA, backend_name
from .data import CostTable, QueryRecord, SyntheticPoolSpec, load_jsonl, save_jsonl, synth_stream
from .diversity import FailureHistory, enumerate_teams, fleiss_kappa, focal_diversity, focal_negative_correlation
from .engine import EngineConfig, MarlFocal, decider_reward, plurality_vote
from .evaluation import eval_baselines, surface_export

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "backend_name",
    "CostTable",
    "QueryRecord",
    "SyntheticPoolSpec",
    "load_jsonl",
    "save_jsonl",
    "synth_stream",
    "FailureHistory",
    "enumerate_teams",
    "fleiss_kappa",
    "focal_diversity",
    "focal_negative_correlation",
    "EngineConfig",
    "MarlFocal",
    "decider_reward",
    "plurality_vote",
    "eval_baselines",
    "surface_export",
]

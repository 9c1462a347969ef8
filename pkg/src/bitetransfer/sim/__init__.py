"""Synthetic world: contact physics, interaction generators, scenarios and episodes."""
from .ablation import AblationConfig, AblationResult, run_ablation
from .episode import (EpisodeConfig, EpisodeTrace, GroundTruthOracle, ModelClassifier, check_summary, read_trace,
                      run_episode, summarize)
from .interactions import GeneratorParams, gen_dataset, gen_interaction
from .profiles import ParticipantProfile, default_profile, draw_profiles
from .scenarios import Scenario, ScriptEvent, builtin_scenario, load_scenario, save_scenario, scenario_from_dict
from .stats import WilcoxonResult, wilcoxon_signed_rank
from .world import ContactParams, World

__all__ = [
    "AblationConfig", "AblationResult", "run_ablation", "EpisodeConfig", "EpisodeTrace", "GroundTruthOracle",
    "ModelClassifier", "check_summary", "read_trace", "run_episode", "summarize", "GeneratorParams",
    "gen_dataset", "gen_interaction", "ParticipantProfile", "default_profile", "draw_profiles", "Scenario",
    "ScriptEvent", "builtin_scenario", "load_scenario", "save_scenario", "scenario_from_dict", "WilcoxonResult",
    "wilcoxon_signed_rank", "ContactParams", "World",
]

"""Matched-seed studies: perception mode (S1 to S3) and awareness level (methods A to D over two feedings)."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError
from ..geometry import Rigid, rotation_about_axis
from .episode import EpisodeConfig, run_episode
from .scenarios import builtin_scenario
from .stats import wilcoxon_signed_rank

log = logging.getLogger(__name__)

STUDIES = ("perception", "methods")
PERCEPTION_SCENARIOS = ("S1_Turn", "S2_Speak", "S3_Spasm")
MODES = ("RealTime", "OneTime")
METHODS = ("A", "B", "C", "D")
FEEDINGS = ("Feeding1_Manipulate", "Feeding2_Impulse")

PERCEPTION_METRICS = ("terminal_error_mm", "paused_fraction_closed", "ever_paused", "retract_latency",
                      "state_changes_during_spasm", "n_contacts", "final_state")
METHOD_METRICS = ("impulse_max_force", "manipulation_mean_force", "placement_error_mm", "manipulation_needed",
                  "bite_success", "time_to_bite", "n_contacts", "retract_on_every_contact", "max_switch_latency",
                  "switch_on_every_contact", "force_mode_during_impulse", "goal_mode_throughout_impulse",
                  "min_compliance_dot", "final_state")
# (metric, feeding it is read from) for the paired tests between methods
METHOD_TESTS = (("impulse_max_force", "Feeding2_Impulse"), ("manipulation_mean_force", "Feeding1_Manipulate"),
                ("placement_error_mm", "Feeding2_Impulse"))


@dataclass(frozen=True)
class AblationConfig:
    trials: int = 20
    seed: int = 0
    head_jitter_mm: float = 5.0          # per-trial head placement spread
    head_jitter_deg: float = 5.0
    jobs: int = 1

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if self.head_jitter_mm < 0 or self.head_jitter_deg < 0:
            raise ConfigurationError("head jitter must be non-negative")


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(trial), 2718]).generate_state(1)[0])


def jittered(scenario, seed: int, mm: float, deg: float):
    """Scenario with the head placed slightly differently for this trial (same for every condition)."""
    rng = np.random.default_rng([seed, 17])
    axis = rng.normal(size=3)
    R = rotation_about_axis(axis / np.linalg.norm(axis), np.deg2rad(rng.uniform(0, deg)))
    base = Rigid.from_rotvec(scenario.head_rotvec, scenario.head_position)
    pose = Rigid(R, rng.normal(0.0, mm, 3)) @ base
    return replace(scenario, head_position=tuple(float(v) for v in pose.t),
                   head_rotvec=tuple(float(v) for v in pose.rotvec()))


def _contact_metrics(summary: dict) -> dict:
    switches = [c for c in summary["contacts"] if "state_after" in c and c["state_before"] not in ("Retract", "Done")]
    lat = [c["latency_ticks"] for c in switches if c["switched"]]
    return {"max_switch_latency": max(lat) if lat else None,
            "switch_on_every_contact": all(c["handled"] for c in switches if c["delivered"] != "NonBite")
            if switches else None}


def _method_row(method, feeding, trial, seed, summary) -> dict:
    s = summary
    row = {"method": method, "feeding": feeding, "trial": trial, "seed": seed,
           "impulse_max_force": s["max_force_by_label"].get("Impulsive"),
           "manipulation_mean_force": s["mean_force_by_label"].get("InMouthManipulation")}
    for k in METHOD_METRICS:
        if k in s:
            row[k] = s[k]
    row.update(_contact_metrics(s))
    return row


def _run_methods_trial(args) -> list:
    method, trial, cfg, acfg, model, template, rig = args
    seed = trial_seed(acfg.seed, trial)
    rows = []
    fsm = None
    for feeding in FEEDINGS:
        sc = jittered(builtin_scenario(feeding), seed, acfg.head_jitter_mm, acfg.head_jitter_deg)
        tr = run_episode(sc, method, "RealTime", model, cfg, seed, template=template, rig=rig, fsm=fsm)
        fsm = tr.fsm
        rows.append(_method_row(method, feeding, trial, seed, tr.summary))
    return rows


def _run_perception_trial(args) -> list:
    scenario, mode, trial, cfg, acfg, model, template, rig = args
    seed = trial_seed(acfg.seed, trial)
    sc = jittered(builtin_scenario(scenario), seed, acfg.head_jitter_mm, acfg.head_jitter_deg)
    tr = run_episode(sc, "A", mode, model, cfg, seed, template=template, rig=rig)
    row = {"scenario": scenario, "mode": mode, "trial": trial, "seed": seed}
    row.update({k: tr.summary.get(k) for k in PERCEPTION_METRICS})
    return [row]


def _map(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


@dataclass
class AblationResult:
    study: str
    rows: list            # one dict per (condition, trial)
    summary: dict

    def rows_csv(self) -> str:
        cols = list(self.rows[0].keys()) if self.rows else []
        for r in self.rows:
            cols += [k for k in r if k not in cols]
        buf = io.StringIO()
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _cell(r.get(k)) for k in cols})
        return buf.getvalue()

    def table_csv(self) -> str:
        """Per-condition means: one line per condition."""
        buf = io.StringIO()
        conds = self.summary["conditions"]
        metrics = sorted({m for c in conds for m in c["means"]})
        keys = [k for k in ("scenario", "mode", "method", "feeding") if k in conds[0]] if conds else []
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + ["n"] + metrics)
        for c in conds:
            w.writerow([c[k] for k in keys] + [c["n"]] + [_cell(c["means"].get(m)) for m in metrics])
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def _mean(values):
    vals = [float(v) for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _conditions(rows, keys, metrics) -> list:
    out = []
    for cond in sorted({tuple(r[k] for k in keys) for r in rows}, key=lambda c: [str(x) for x in c]):
        sel = [r for r in rows if tuple(r[k] for k in keys) == cond]
        means = {}
        for m in metrics:
            vals = [r.get(m) for r in sel]
            if all(isinstance(v, (bool, type(None))) for v in vals) and any(isinstance(v, bool) for v in vals):
                means[m] = _mean([float(v) for v in vals if v is not None])     # fraction of True
            elif all(isinstance(v, (int, float, type(None))) for v in vals):
                means[m] = _mean(vals)
        out.append({**dict(zip(keys, cond)), "n": len(sel), "means": means})
    return out


def _paired(rows_a, rows_b, metric) -> dict:
    by_a = {r["trial"]: r.get(metric) for r in rows_a}
    by_b = {r["trial"]: r.get(metric) for r in rows_b}
    trials = sorted(t for t in by_a if t in by_b and by_a[t] is not None and by_b[t] is not None)
    if not trials:
        return {"n": 0, "mean_a": None, "mean_b": None, "p_two_sided": None, "p_a_less": None}
    a = np.array([float(by_a[t]) for t in trials])
    b = np.array([float(by_b[t]) for t in trials])
    two = wilcoxon_signed_rank(a, b)
    less = wilcoxon_signed_rank(a, b, alternative="less")
    return {"n": len(trials), "mean_a": float(a.mean()), "mean_b": float(b.mean()),
            "statistic": two.statistic, "method": two.method,
            "p_two_sided": two.pvalue, "p_a_less": less.pvalue}


def run_ablation(study: str, trials: int = 20, seed: int = 0, cfg: EpisodeConfig | None = None, model=None,
                 jobs: int = 1, acfg: AblationConfig | None = None, template=None, rig=None) -> AblationResult:
    """Run every condition of ``study`` on the same ``trials`` seeds and test paired differences."""
    if study not in STUDIES:
        raise ConfigurationError(f"study must be one of {STUDIES}")
    acfg = acfg or AblationConfig(trials=trials, seed=seed, jobs=jobs)
    acfg.validate()
    cfg = cfg or EpisodeConfig()
    cfg.validate()
    meta = {"study": study, "trials": acfg.trials, "seed": acfg.seed, "head_jitter_mm": acfg.head_jitter_mm,
            "head_jitter_deg": acfg.head_jitter_deg,
            "classifier": "oracle" if model is None else type(model).__name__}

    if study == "methods":
        tasks = [(m, k, cfg, acfg, model, template, rig) for m in METHODS for k in range(acfg.trials)]
        rows = [r for rs in _map(_run_methods_trial, tasks, acfg.jobs) for r in rs]
        rows.sort(key=lambda r: (r["method"], FEEDINGS.index(r["feeding"]), r["trial"]))
        tests = {}
        for metric, feeding in METHOD_TESTS:
            for a, b in itertools.combinations(METHODS, 2):
                ra = [r for r in rows if r["method"] == a and r["feeding"] == feeding]
                rb = [r for r in rows if r["method"] == b and r["feeding"] == feeding]
                tests[f"{metric}:{a}_vs_{b}"] = {"feeding": feeding, **_paired(ra, rb, metric)}
        summary = {**meta, "conditions": _conditions(rows, ("method", "feeding"), METHOD_METRICS), "tests": tests}
    else:
        tasks = [(s, m, k, cfg, acfg, model, template, rig)
                 for s in PERCEPTION_SCENARIOS for m in MODES for k in range(acfg.trials)]
        rows = [r for rs in _map(_run_perception_trial, tasks, acfg.jobs) for r in rs]
        rows.sort(key=lambda r: (PERCEPTION_SCENARIOS.index(r["scenario"]), MODES.index(r["mode"]), r["trial"]))
        tests = {}
        for s in PERCEPTION_SCENARIOS:
            ra = [r for r in rows if r["scenario"] == s and r["mode"] == "RealTime"]
            rb = [r for r in rows if r["scenario"] == s and r["mode"] == "OneTime"]
            for metric in ("terminal_error_mm", "paused_fraction_closed"):
                tests[f"{metric}:{s}:RealTime_vs_OneTime"] = _paired(ra, rb, metric)
        summary = {**meta, "conditions": _conditions(rows, ("scenario", "mode"), PERCEPTION_METRICS), "tests": tests}
    return AblationResult(study, rows, summary)

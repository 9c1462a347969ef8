"""Command-line entry point: ``bitetransfer <subcommand> [flags]``.

Every artifact-producing subcommand writes its results, the fully resolved
configuration (``config.json``) and a timestamped sidecar log (``run.log``)
into its output location, and refuses to overwrite existing results unless
``--force`` is given. A ``--config`` file overrides the flags.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dumps, from_dict, load_config, merge, validate_output
from .errors import ConfigurationError, ScenarioError, UsageError
from .labels import LABELS

log = logging.getLogger("bitetransfer")

COMMANDS = ("gen-data", "train", "eval", "finetune-curve", "perception-bench", "run-episode", "ablation", "selftest")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


# --------------------------------------------------------------------------- outputs

@dataclass
class Outputs:
    """Files one run will write; checked for collisions before any work starts."""
    files: dict                       # key -> Path
    force: bool
    written: list = field(default_factory=list)

    def check(self) -> None:
        # the sidecar log is rewritten every run and never blocks one
        existing = [str(p) for k, p in self.files.items() if k != "run.log" and p.exists()]
        if existing and not self.force:
            raise UsageError(f"refusing to overwrite {existing[0]} (use --force)")
        for p in self.files.values():
            p.parent.mkdir(parents=True, exist_ok=True)

    def text(self, key: str, text: str) -> Path:
        p = self.files[key]
        p.write_text(text)
        self.written.append(p)
        return p

    def json(self, key: str, doc, schema: str | None = None) -> Path:
        if schema is not None:
            validate_output(_roundtrip(doc), schema)
        return self.text(key, dumps(doc))


def _roundtrip(doc):
    import json
    return json.loads(dumps(doc))


def _dir_outputs(out, names, force, extra=None) -> Outputs:
    d = Path(out)
    files = {k: d / k for k in names}
    files.update({"config.json": d / "config.json", "run.log": d / "run.log"})
    files.update(extra or {})
    return Outputs(files, force)


def _start_log(path: Path) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    h = logging.FileHandler(path, mode="w")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("bitetransfer").addHandler(h)
    logging.getLogger("bitetransfer").setLevel(logging.INFO)
    return h


# --------------------------------------------------------------------------- parser

def _common(p, out_required=True, out_help="output directory"):
    p.add_argument("--seed", type=int, default=0, help="single source of all randomness (default 0)")
    p.add_argument("--config", metavar="PATH", help="YAML/JSON experiment config; its values override flags")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    if out_required is not None:
        p.add_argument("--out", required=out_required, metavar="PATH", help=out_help)


def _head(p):
    p.add_argument("--template", metavar="PATH", help="head template file (default: shipped template)")
    p.add_argument("--rig", metavar="PATH", help="camera rig file (default: two tool cameras)")


def build_parser() -> argparse.ArgumentParser:
    """Top-level parser; ``ap.subparsers`` maps each subcommand to its own parser."""
    ap = _Parser(prog="bitetransfer", description="Simulated inside-mouth bite transfer experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a labelled synthetic interaction dataset")
    _common(p)
    _head(p)
    p.add_argument("--participants", type=int, help="number of synthetic participants (default 6)")
    p.add_argument("--per-label", type=int, help="samples per label per participant (default 128)")
    p.add_argument("--trait-spread", type=float, help="between-participant style spread (default 1.0)")

    p = sub.add_parser("train", help="train a classifier on a dataset")
    _common(p)
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory from gen-data")
    p.add_argument("--model", choices=("svm", "mlp"), help="classifier kind (default svm)")
    p.add_argument("--modality", choices=("all", "haptic", "visual"), help="feature subset (default all)")

    p = sub.add_parser("eval", help="evaluate a saved model or run an evaluation protocol")
    _common(p)
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory from gen-data")
    p.add_argument("--model", metavar="PATH", help="saved model file; evaluates it on the whole dataset")
    p.add_argument("--protocol", choices=("aggregated", "loo"),
                   help="train/test protocol (default aggregated when --model is not given)")
    p.add_argument("--kind", choices=("svm", "mlp"), help="classifier kind for protocol runs")
    p.add_argument("--modality", choices=("all", "haptic", "visual"), help="feature subset for protocol runs")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG rendering")

    p = sub.add_parser("finetune-curve", help="novel-participant finetuning curve")
    _common(p)
    p.add_argument("--data", required=True, metavar="DIR", help="dataset directory from gen-data")
    p.add_argument("--kind", choices=("svm", "mlp"), help="classifier kind (default svm)")
    p.add_argument("--modality", choices=("all", "haptic", "visual"), help="feature subset (default all)")
    p.add_argument("--sizes", type=int, nargs="+", default=[4, 8, 16, 32, 64], help="finetuning set sizes")
    p.add_argument("--repeats", type=int, default=5, help="split seeds per participant (seed .. seed+N-1)")
    p.add_argument("--participants", type=int, nargs="+", help="held-out participants (default all)")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG rendering")

    p = sub.add_parser("perception-bench", help="tracker vs direct-depth baseline under mouth occlusion")
    _common(p, out_help="per-trial CSV file; the summary goes next to it as .json")
    _head(p)
    p.add_argument("--occlusion", choices=("none", "low", "medium", "high", "full"), help="default full")
    p.add_argument("--trials", type=int, help="number of seeded trials (default 100)")

    p = sub.add_parser("run-episode", help="simulate one feeding episode")
    _common(p)
    _head(p)
    p.add_argument("--scenario", help="built-in name (s1, s2, s3, feeding1, feeding2, static) or a scenario file")
    p.add_argument("--awareness", choices=("A", "B", "C", "D"), default="A", help="method (default A)")
    p.add_argument("--perception", choices=("RealTime", "OneTime"), default="RealTime")
    p.add_argument("--model", default="oracle", metavar="PATH|oracle",
                   help="contact classifier: saved model file or the ground-truth oracle (default)")
    p.add_argument("--prior", metavar="SCENARIO",
                   help="run this feeding first and carry the machine (and learned location) over")
    p.add_argument("--occlusion", choices=("none", "low", "medium", "high", "full"), help="default low")

    p = sub.add_parser("ablation", help="matched-seed perception or methods study")
    _common(p)
    _head(p)
    p.add_argument("--study", required=True, choices=("perception", "methods"))
    p.add_argument("--trials", type=int, help="matched seeds per condition (default 20)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--model", default="oracle", metavar="PATH|oracle", help="contact classifier (default oracle)")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG rendering")

    p = sub.add_parser("selftest", help="built-in analytic checks; prints PASS/FAIL")
    _common(p, out_required=False, out_help="optional directory for selftest.json")
    p.add_argument("--registration-trials", type=int, default=50, help="random poses to recover (default 50)")
    ap.subparsers = sub.choices
    return ap


# --------------------------------------------------------------------------- config resolution

def _flag_overrides(args) -> dict:
    """Flags that map onto the experiment config (only those actually given)."""
    pairs = {
        "template": ("template",), "rig": ("rig",), "out": ("output",),
        "participants": ("data", "n_participants"), "per_label": ("data", "n_per_label_per_participant"),
        "trait_spread": ("data", "trait_spread"), "modality": ("model", "modality"),
        "kind": ("model", "kind"), "occlusion": None, "trials": None, "jobs": ("ablation", "jobs"),
        "scenario": ("scenario",),
    }
    out: dict = {"seed": args.seed}
    cmd = args.command

    def put(path, value):
        d = out
        for k in path[:-1]:
            d = d.setdefault(k, {})
        d[path[-1]] = value

    for name, path in pairs.items():
        value = getattr(args, name, None)
        if value is None or (name == "participants" and cmd == "finetune-curve"):
            continue
        if name == "occlusion":
            path = ("perception", "occlusion") if cmd == "perception-bench" else ("episode", "occlusion")
        elif name == "trials":
            path = ("perception", "trials") if cmd == "perception-bench" else ("ablation", "trials")
        put(path, value)
    if cmd == "train" and args.model is not None:
        put(("model", "kind"), args.model)
    return out


def resolve_config(args) -> ExperimentConfig:
    cfg = merge(ExperimentConfig(), _flag_overrides(args))
    if args.config:
        cfg = merge(cfg, {k: v for k, v in load_config(args.config).items() if k != "version"}, "config file")
    cfg.validate()
    from_dict(cfg.to_dict())          # round-trip: what we write is loadable
    return cfg


def _template(cfg):
    from .headmodel import load_template
    return load_template(cfg.template)


def _rig(cfg):
    from .perception import load_rig
    return load_rig(cfg.rig)


def _load_data(path):
    from .classify import LabeledDataset
    return LabeledDataset.load(path)


def _load_classifier(spec):
    if spec is None or spec == "oracle":
        return None
    from .classify import load_model
    if not Path(spec).is_file():
        raise UsageError(f"model file {spec} not found")
    return load_model(spec)


def _scenario(spec):
    from .sim.scenarios import builtin_scenario, load_scenario
    return load_scenario(spec) if Path(spec).is_file() else builtin_scenario(spec)


def _csv(rows, cols=None) -> str:
    cols = cols or list(rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# --------------------------------------------------------------------------- subcommands

def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    from .sim import gen_dataset
    outs = _dir_outputs(args.out, ("X.npy", "y.npy", "participant.npy", "dataset.json", "summary.json"), args.force)
    outs.check()
    h = _start_log(outs.files["run.log"])
    try:
        dc = cfg.data
        log.info("generating %d participants x %d per label", dc.n_participants, dc.n_per_label_per_participant)
        data = gen_dataset(dc.n_participants, dc.n_per_label_per_participant, cfg.seed, cfg.generator,
                           _template(cfg), dc.trait_spread)
        data.save(args.out)
        counts = {lab.name: int(np.sum(data.y == int(lab))) for lab in LABELS}
        outs.json("summary.json", {"command": "gen-data", "n_samples": len(data), "n_features": data.X.shape[1],
                                   "n_participants": len(data.participants),
                                   "per_cell": dc.n_per_label_per_participant,
                                   "config_hash": data.provenance["config_hash"], "label_counts": counts},
                  "dataset")
        outs.json("config.json", cfg.to_dict(), "config")
        print(f"wrote {len(data)} samples to {args.out}")
    finally:
        logging.getLogger("bitetransfer").removeHandler(h)
        h.close()
    return 0


def cmd_train(args, cfg: ExperimentConfig) -> int:
    from .classify import evaluate, save_model, train_model
    data = _load_data(args.data)
    outs = _dir_outputs(args.out, ("model.json", "summary.json"), args.force)
    outs.check()
    h = _start_log(outs.files["run.log"])
    try:
        log.info("training %s/%s on %d samples", cfg.model.kind, cfg.model.modality, len(data))
        model = train_model(data, cfg.model)
        save_model(model, outs.files["model.json"])
        m = evaluate(model, data)
        outs.json("summary.json", {"command": "train", "model_file": "model.json", "model": cfg.model.to_dict(),
                                   "n_train": len(data), "train_macro_f1": m.macro_f1}, "train")
        outs.json("config.json", cfg.to_dict(), "config")
        print(f"model: {outs.files['model.json']}  train macro-F1 {m.macro_f1:.3f}")
    finally:
        logging.getLogger("bitetransfer").removeHandler(h)
        h.close()
    return 0


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    from .classify import evaluate, load_model, metrics_from_confusion, protocol_aggregated, protocol_loo
    if args.model and args.protocol:
        raise UsageError("give either --model (evaluate a saved model) or --protocol, not both")
    data = _load_data(args.data)
    names = ["metrics.json", "confusion.csv"] + ([] if args.no_plots else ["confusion.png"])
    outs = _dir_outputs(args.out, names, args.force)
    outs.check()
    h = _start_log(outs.files["run.log"])
    try:
        per = None
        if args.model:
            if not Path(args.model).is_file():
                raise UsageError(f"model file {args.model} not found")
            model = load_model(args.model)
            protocol, m, model_desc = "model", evaluate(model, data), {"file": str(args.model), "kind": model.kind}
        elif (args.protocol or "aggregated") == "aggregated":
            protocol, m, model_desc = "aggregated", protocol_aggregated(data, cfg.model, cfg.seed), cfg.model.to_dict()
        else:
            folds = protocol_loo(data, cfg.model)
            per = [{"participant": int(p), "metrics": f.to_dict()} for p, f in zip(data.participants, folds)]
            m = metrics_from_confusion(sum(f.confusion for f in folds))
            protocol, model_desc = "loo", cfg.model.to_dict()
        log.info("protocol %s macro-F1 %.4f", protocol, m.macro_f1)
        # LOO reports the mean over held-out participants; the pooled confusion is also kept
        macro = float(np.mean([f["metrics"]["macro_f1"] for f in per])) if per else m.macro_f1
        doc = {"command": "eval", "protocol": protocol, "model": model_desc, "metrics": m.to_dict(),
               "macro_f1": macro}
        if per:
            doc["per_participant"] = per
        outs.json("metrics.json", doc, "metrics")
        outs.text("confusion.csv", m.confusion_csv())
        if not args.no_plots:
            from . import plots
            plots.confusion(m.confusion, outs.files["confusion.png"], f"{protocol} (macro-F1 {macro:.3f})")
        outs.json("config.json", cfg.to_dict(), "config")
        print(f"{protocol}: macro-F1 {macro:.4f}")
    finally:
        logging.getLogger("bitetransfer").removeHandler(h)
        h.close()
    return 0


def cmd_finetune_curve(args, cfg: ExperimentConfig) -> int:
    from .classify import finetune_curve
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    data = _load_data(args.data)
    names = ["curve.csv", "curve.json"] + ([] if args.no_plots else ["finetune_curve.png"])
    outs = _dir_outputs(args.out, names, args.force)
    outs.check()
    h = _start_log(outs.files["run.log"])
    try:
        seeds = list(range(cfg.seed, cfg.seed + args.repeats))
        res = finetune_curve(data, cfg.model, tuple(args.sizes), tuple(seeds), args.participants)
        f1 = res["mean_macro_f1"]
        ok = all(b >= a - 0.01 for a, b in zip(f1, f1[1:]))
        outs.text("curve.csv", _csv(res["rows"], ["participant", "seed", "size", "macro_f1"]))
        outs.json("curve.json", {"command": "finetune-curve", "sizes": res["sizes"], "mean_macro_f1": f1,
                                 "seeds": seeds, "model": cfg.model.to_dict(),
                                 "non_decreasing_within_0_01": ok}, "finetune_curve")
        if not args.no_plots:
            from . import plots
            plots.finetune_curve(res["sizes"], f1, outs.files["finetune_curve.png"])
        outs.json("config.json", cfg.to_dict(), "config")
        print("size  " + "  ".join(f"{s:>5d}" for s in res["sizes"]))
        print("F1    " + "  ".join(f"{v:5.3f}" for v in f1))
    finally:
        logging.getLogger("bitetransfer").removeHandler(h)
        h.close()
    return 0


def cmd_perception_bench(args, cfg: ExperimentConfig) -> int:
    from .perception import perception_bench
    out = Path(args.out)
    outs = Outputs({"csv": out, "json": out.with_suffix(".json"), "config.json": out.with_suffix(".config.json"),
                    "run.log": out.with_suffix(".log")}, args.force)
    outs.check()
    h = _start_log(outs.files["run.log"])
    try:
        pc = cfg.perception
        rows = perception_bench(_template(cfg), _rig(cfg), pc.trials, cfg.seed, pc.occlusion)
        for r in rows:
            log.info("trial %d", r["trial"])
        outs.text("csv", _csv(rows))

        def med(k):
            return float(np.median([r[k] for r in rows]))

        doc = {"command": "perception-bench", "occlusion": pc.occlusion, "trials": pc.trials,
               "n_robust": sum(r["robust"] for r in rows), "n_beats_baseline": sum(r["beats_baseline"] for r in rows),
               "n_both": sum(r["robust"] and r["beats_baseline"] for r in rows),
               "median_error_clean_mm": med("error_clean_mm"), "median_error_occluded_mm": med("error_occluded_mm"),
               "median_error_direct_mm": med("error_direct_mm")}
        outs.json("json", doc, "perception_bench")
        outs.json("config.json", cfg.to_dict(), "config")
        print(f"{doc['n_both']}/{pc.trials} trials robust and >=10x better than direct depth")
    finally:
        logging.getLogger("bitetransfer").removeHandler(h)
        h.close()
    return 0


def cmd_run_episode(args, cfg: ExperimentConfig) -> int:
    from .sim import check_summary, run_episode
    scenario = _scenario(cfg.scenario)
    prior = _scenario(args.prior) if args.prior else None
    model = _load_classifier(args.model)
    outs = _dir_outputs(args.out, ("trace.csv", "summary.json"), args.force)
    outs.check()
    h = _start_log(outs.files["run.log"])
    try:
        template, rig = _template(cfg), _rig(cfg)
        fsm = None
        if prior is not None:
            fsm = run_episode(prior, args.awareness, args.perception, model, cfg.episode, cfg.seed,
                              template=template, rig=rig).fsm
            log.info("prior feeding %s done", prior.kind)
        tr = run_episode(scenario, args.awareness, args.perception, model, cfg.episode, cfg.seed,
                         template=template, rig=rig, fsm=fsm)
        for line in tr.log:
            log.info("fsm %s", line)
        outs.text("trace.csv", tr.to_csv())
        meta = {**tr.meta, "classifier": "oracle" if model is None else str(args.model),
                "prior": prior.kind if prior else None}
        outs.json("summary.json", {"meta": meta, "summary": tr.summary, "summary_recomputed_ok": check_summary(tr)},
                  "episode")
        outs.json("config.json", cfg.to_dict(), "config")
        s = tr.summary
        print(f"{scenario.kind} [{args.awareness}/{args.perception}]: final {s['final_state']}, "
              f"{s['n_ticks']} ticks, {len(s['contacts'])} contact(s)")
    finally:
        logging.getLogger("bitetransfer").removeHandler(h)
        h.close()
    return 0


def cmd_ablation(args, cfg: ExperimentConfig) -> int:
    from .sim import run_ablation
    model = _load_classifier(args.model)
    names = ["rows.csv", "table.csv", "summary.json"] + ([] if args.no_plots else [f"{args.study}.png"])
    outs = _dir_outputs(args.out, names, args.force)
    outs.check()
    h = _start_log(outs.files["run.log"])
    try:
        ac = cfg.ablation
        res = run_ablation(args.study, cfg=cfg.episode, model=model, acfg=ac,
                           template=_template(cfg), rig=_rig(cfg))
        outs.text("rows.csv", res.rows_csv())
        outs.text("table.csv", res.table_csv())
        outs.json("summary.json", res.summary, "ablation")
        if not args.no_plots:
            from . import plots
            draw = plots.methods_study if args.study == "methods" else plots.perception_study
            draw(res.summary, outs.files[f"{args.study}.png"])
        outs.json("config.json", cfg.to_dict(), "config")
        sys.stdout.write(res.table_csv())
    finally:
        logging.getLogger("bitetransfer").removeHandler(h)
        h.close()
    return 0


def selftest_checks(seed: int = 0, registration_trials: int = 50) -> list[dict]:
    """The built-in analytic checks: Hjorth sinusoid, MLP gradient, registration recovery."""
    from .classify.mlp import gradient_check, init_params
    from .features import hjorth
    from .headmodel import default_template
    from .perception import registration_trial

    t = np.arange(100) / 1000.0
    _, _, comp = hjorth(np.sin(2 * np.pi * 10 * t))
    checks = [{"name": "hjorth_sinusoid_complexity", "value": comp, "threshold": "1 +/- 0.02",
               "passed": bool(abs(comp - 1) <= 0.02)}]

    rng = np.random.default_rng([seed, 5])
    params = init_params([12, 16, 8, 4], rng)
    X, y = rng.normal(size=(32, 12)), rng.integers(0, 4, 32)
    err = gradient_check(params, X, y, n_coords=20, seed=seed)
    checks.append({"name": "mlp_gradient_check", "value": err, "threshold": "< 1e-4", "passed": bool(err < 1e-4)})

    template = default_template()
    trials = [registration_trial(template, [seed, k, 31]) for k in range(registration_trials)]
    t_err = max(r["translation_error_mm"] for r in trials)
    r_err = max(r["rotation_error_deg"] for r in trials)
    mono = all(r["objective_monotone"] for r in trials)
    log.info("registration: slowest solve %.2f ms", 1e3 * max(r["seconds"] for r in trials))
    checks.append({"name": "registration_translation_mm", "value": t_err, "threshold": "< 1",
                   "passed": bool(t_err < 1)})
    checks.append({"name": "registration_rotation_deg", "value": r_err, "threshold": "< 0.5",
                   "passed": bool(r_err < 0.5)})
    checks.append({"name": "registration_objective_monotone", "value": float(mono), "threshold": "1",
                   "passed": mono})
    return checks


def cmd_selftest(args, cfg: ExperimentConfig) -> int:
    if args.registration_trials < 1:
        raise UsageError("--registration-trials must be >= 1")
    outs = _dir_outputs(args.out, ("selftest.json",), args.force) if args.out else None
    h = None
    if outs:
        outs.check()
        h = _start_log(outs.files["run.log"])
    try:
        checks = selftest_checks(cfg.seed, args.registration_trials)
        for c in checks:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  value={c['value']:.6g}  ({c['threshold']})")
        passed = all(c["passed"] for c in checks)
        print("selftest:", "PASS" if passed else "FAIL")
        if outs:
            outs.json("selftest.json", {"checks": checks, "passed": passed}, "selftest")
            outs.json("config.json", cfg.to_dict(), "config")
    finally:
        if h:
            logging.getLogger("bitetransfer").removeHandler(h)
            h.close()
    return 0 if passed else 2


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "finetune-curve": cmd_finetune_curve,
            "perception-bench": cmd_perception_bench, "run-episode": cmd_run_episode, "ablation": cmd_ablation,
            "selftest": cmd_selftest}


def main(argv=None) -> int:
    """Run one subcommand; returns 0 on success, 1 on a usage error, 2 on a runtime error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"bitetransfer: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:               # --help / --version
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](args, cfg)
    except (UsageError, ConfigurationError, ScenarioError) as exc:
        print(f"bitetransfer {args.command}: error: {exc}", file=sys.stderr)
        print(parser.subparsers[args.command].format_usage().rstrip(), file=sys.stderr)
        return 1
    except Exception as exc:                # anything past argument handling is a runtime failure
        log.debug("runtime error", exc_info=True)
        print(f"bitetransfer {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()

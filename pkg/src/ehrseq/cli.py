"""Command-line pipeline: synth -> ingest -> cohort -> build-vocab -> train
-> evaluate -> explain.

Each stage writes its artifact plus a run manifest (command, seed, config
hash, input digests) so any run can be reproduced exactly. Exit codes:
0 ok, 2 config error, 3 missing artifact, 4 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import cohort as cohort_mod
from . import explain as explain_mod
from . import fhir_ingest, metrics, plots, synth, timeline
from . import models as models_mod
from .models import baselines as baselines_mod
from .models import lstm as lstm_mod
from .models import stumps as stumps_mod
from .models import tann as tann_mod


class ConfigError(Exception):
    exit_code = 2


class MissingArtifactError(Exception):
    exit_code = 3


class DataError(Exception):
    exit_code = 4


ARCHES = ("logistic", "tann", "lstm", "stumps")
ALL_TAGS = ("minus24h", "minus12h", "admit", "plus12h", "plus24h", "discharge")

# short spellings accepted anywhere a prediction timepoint is named
TAG_ALIASES = {"-24h": "minus24h", "-12h": "minus12h", "+12h": "plus12h", "+24h": "plus24h"}


def _time_tag(value: str) -> str:
    tag = TAG_ALIASES.get(value, value)
    if tag not in ALL_TAGS:
        raise argparse.ArgumentTypeError(f"unknown timepoint {value!r}; use one of {ALL_TAGS + tuple(TAG_ALIASES)}")
    return tag


def _require_file(path, stage: str):
    if path is None:
        raise ConfigError(f"{stage}: required input path missing")
    if not os.path.exists(path):
        raise MissingArtifactError(f"{stage}: missing artifact {path}")
    return path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(artifact_path, command: str, seed, inputs: dict, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "config_hash": hashlib.sha256(
            json.dumps(extra or {}, sort_keys=True).encode()
        ).hexdigest(),
        "extra": extra or {},
    }
    with open(str(artifact_path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)


def _apply_config_defaults(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the --config JSON file (keys use underscores).

    Config-fillable flags default to None in the parser; an explicit
    command-line value always wins over the config file.
    """
    if getattr(args, "config", None) is None:
        return args
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            defaults = json.load(fh)
    except FileNotFoundError as exc:
        raise MissingArtifactError(f"config file {args.config} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {args.config}: {exc}") from exc
    if not isinstance(defaults, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, value in defaults.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, value)
    return args


TRAIN_FALLBACKS = {
    "epochs": 20,
    "lr": 0.1,
    "l2": 1e-4,
    "dim": 32,
    "att_dim": 32,
    "hidden": 32,
    "batch": 64,
    "rounds": 40,
    "min_support": 5,
    "max_tokens": 512,
    "max_bags": 64,
    "bag_hours": 12.0,
    "code_min_count": 5,
}


def _fill_fallbacks(args, fallbacks: dict) -> None:
    for name, value in fallbacks.items():
        if getattr(args, name, None) is None:
            setattr(args, name, value)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    path = _require_file(args.synth_config, "synth")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = synth.SynthConfig.from_json(fh.read())
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"synth config: {exc}") from exc
    resources, truths = synth.generate_cohort(cfg, jobs=args.jobs)
    fhir_ingest.write_ndjson(args.out, resources)
    synth.write_truth_manifest(args.manifest, truths)
    write_run_manifest(args.out, "synth", cfg.seed, {"config": path}, {"n_patients": cfg.n_patients})
    print(f"synth: {len(resources)} resources, {len(truths)} encounters -> {args.out}")
    return 0


def cmd_ingest(args) -> int:
    src = _require_file(args.input, "ingest")
    report = fhir_ingest.IngestReport()
    with open(args.archive, "w", encoding="utf-8") as out:
        for resource in fhir_ingest.stream_resources(src, report):
            out.write(fhir_ingest.resource_to_jsonline(resource))
            out.write("\n")
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
    write_run_manifest(args.archive, "ingest", None, {"input": src})
    print(
        f"ingest: accepted {report.resources_accepted}, rejected {report.resources_rejected} "
        f"({dict(sorted(report.rejection_reasons.items()))})"
    )
    return 0


def cmd_cohort(args) -> int:
    src = _require_file(args.archive, "cohort")
    if args.seed is None:
        raise ConfigError("cohort: --seed is required")
    planned_rules = None
    if args.planned_rules:
        with open(_require_file(args.planned_rules, "cohort"), "r", encoding="utf-8") as fh:
            planned_rules = json.load(fh)
    resources, _ = fhir_ingest.parse_resource_stream(src)
    all_encounters = cohort_mod.extract_encounters(resources, planned_rules)
    if not all_encounters:
        raise DataError("cohort: no encounters in archive")
    eligible = cohort_mod.select_inclusions(all_encounters)
    if not eligible:
        raise DataError("cohort: no eligible encounters")
    labels = cohort_mod.build_label_sets(eligible, all_encounters)
    split = cohort_mod.split_patients([e.patient_id for e in eligible], int(args.seed))
    rows = cohort_mod.cohort_manifest_rows(eligible, labels, split)
    cohort_mod.write_cohort_manifest(args.out, rows)
    cohort_mod.write_encounters(args.encounters, eligible)
    write_run_manifest(args.out, "cohort", int(args.seed), {"archive": src})
    print(f"cohort: {len(eligible)}/{len(all_encounters)} encounters eligible, {len(rows)} manifest rows")
    return 0


def _dev_patient_ids(manifest_rows) -> set[str]:
    return {r["patient_id"] for r in manifest_rows if r["split"] == "dev"}


def cmd_build_vocab(args) -> int:
    src = _require_file(args.archive, "build-vocab")
    manifest_path = _require_file(args.cohort, "build-vocab")
    manifest_rows = cohort_mod.read_cohort_manifest(manifest_path)
    dev_patients = _dev_patient_ids(manifest_rows)
    if not dev_patients:
        raise DataError("build-vocab: empty development split")
    resources, _ = fhir_ingest.parse_resource_stream(src)
    dev_resources = [r for r in resources if r.patient_id in dev_patients]
    quantizer = timeline.fit_quantizer(timeline.collect_numeric_observations(dev_resources))
    try:
        vocab = timeline.build_vocabulary(dev_resources, args.min_count, quantizer)
    except ValueError as exc:
        raise ConfigError(f"build-vocab: {exc}") from exc
    with open(args.vocab, "w", encoding="utf-8") as fh:
        fh.write(vocab.to_json())
    with open(args.quantizer, "w", encoding="utf-8") as fh:
        fh.write(quantizer.to_json())
    timelines = timeline.timelines_from_resources(resources, vocab, quantizer)
    ordered = [timelines[p] for p in sorted(timelines)]
    timeline.write_timeline_archive(args.timelines, ordered)
    if args.dump_text:
        with open(args.dump_text, "w", encoding="utf-8") as fh:
            for line in timeline.dump_text(ordered):
                fh.write(line + "\n")
    write_run_manifest(
        args.timelines,
        "build-vocab",
        None,
        {"archive": src, "cohort": manifest_path},
        {"min_count": args.min_count, "vocab_size": vocab.size},
    )
    print(f"build-vocab: vocabulary size {vocab.size}, {len(ordered)} patient timelines")
    return 0


def _load_pipeline_state(args, stage: str):
    timelines_path = _require_file(args.timelines, stage)
    cohort_path = _require_file(args.cohort, stage)
    encounters_path = _require_file(args.encounters, stage)
    vocab_path = _require_file(args.vocab, stage)
    timelines = {tl.patient_id: tl for tl in timeline.read_timeline_archive(timelines_path)}
    manifest_rows = cohort_mod.read_cohort_manifest(cohort_path)
    encounters = {e.encounter_id: e for e in cohort_mod.read_encounters(encounters_path)}
    with open(vocab_path, "r", encoding="utf-8") as fh:
        vocab = timeline.Vocabulary.from_json(fh.read())
    labels, split = _labels_from_manifest(manifest_rows)
    return timelines, encounters, labels, split, vocab


def _labels_from_manifest(rows):
    per_encounter: dict[str, dict] = {}
    assignments: dict[str, str] = {}
    for r in rows:
        assignments[r["patient_id"]] = r["split"]
        rec = per_encounter.setdefault(r["encounter_id"], {})
        if r["task"] == "diagnoses":
            rec["diagnoses"] = frozenset(c for c in r["label"].split(",") if c)
        elif r["task"] in ("mortality", "readmission", "long_los"):
            rec[r["task"]] = r["label"] == "1"
    labels = {}
    for eid, rec in per_encounter.items():
        codes = rec.get("diagnoses", frozenset())
        labels[eid] = cohort_mod.LabelSet(
            mortality=rec.get("mortality", False),
            readmit30=rec.get("readmission", False),
            long_los=rec.get("long_los", False),
            diagnoses=codes,
            diagnoses_eligible=bool(codes),
        )
    return labels, cohort_mod.SplitAssignment(assignments=assignments, seed=-1)


def _examples(args, stage, splits, purpose, task=None, tag=None):
    timelines, encounters, labels, split, vocab = _load_pipeline_state(args, stage)
    task = task or args.task
    tag = tag or args.at
    if task not in cohort_mod.TASKS:
        raise ConfigError(f"{stage}: unknown task {task!r}")
    if tag not in cohort_mod.TASK_TIME_TAGS[task]:
        raise ConfigError(
            f"{stage}: task {task} is not predicted at {tag}; grid is {cohort_mod.TASK_TIME_TAGS[task]}"
        )
    try:
        examples = cohort_mod.build_task_examples(
            task, tag, splits, purpose, timelines, encounters, labels, split
        )
    except cohort_mod.SplitLeakageError as exc:
        raise ConfigError(str(exc)) from exc
    if not examples:
        raise DataError(f"{stage}: no examples for task {task} at {tag} in splits {splits}")
    return examples, vocab


def cmd_train(args) -> int:
    _fill_fallbacks(args, TRAIN_FALLBACKS)
    if args.seed is None:
        raise ConfigError("train: --seed is required")
    if args.arch not in ARCHES:
        raise ConfigError(f"train: unknown arch {args.arch!r}")
    seed = int(args.seed)
    examples, vocab = _examples(args, "train", splits=("dev",), purpose="train")
    prefixes = [ex.prefix for ex in examples]

    if args.task == "diagnoses":
        if args.arch != "tann":
            raise ConfigError("train: the diagnoses task uses the tann multi-label head")
        hp = tann_mod.TannHyperparams(
            d=args.dim, att_dim=args.att_dim, lr=args.lr, epochs=args.epochs,
            batch_size=args.batch, seed=seed, max_tokens=args.max_tokens,
        )
        code_sets = [ex.label for ex in examples]
        try:
            model, kept, excluded = tann_mod.train_diagnoses_head(
                prefixes, code_sets, vocab.size, min_count=args.code_min_count, hp=hp
            )
        except ValueError as exc:
            raise DataError(f"train: {exc}") from exc
        models_mod.save_model(model, args.out)
        extra = {"arch": "tann", "task": args.task, "at": args.at, "codes": len(kept), "excluded_codes": excluded}
    else:
        labels = np.array([bool(ex.label) for ex in examples])
        try:
            if args.arch == "logistic":
                config = baselines_mod.load_baseline_config(args.baseline_config)
                kind = args.baseline_kind or {"mortality": "aews", "readmission": "mhospital", "long_los": "mliu"}[args.task]
                X = baselines_mod.featurize_matrix(kind, examples, vocab, config)
                names = baselines_mod.feature_names(kind, config)
                logistic, _ = baselines_mod.train_logistic(
                    X, labels, l2=args.l2, lr=args.lr, epochs=args.epochs, seed=seed, feature_names_=names
                )
                model = baselines_mod.BaselineModel(kind=kind, logistic=logistic, config=config)
            elif args.arch == "tann":
                hp = tann_mod.TannHyperparams(
                    d=args.dim, att_dim=args.att_dim, lr=args.lr, epochs=args.epochs,
                    batch_size=args.batch, seed=seed, max_tokens=args.max_tokens,
                )
                if args.per_modality:
                    model = tann_mod.train_per_modality(prefixes, labels, vocab.size, hp)
                else:
                    model, _ = tann_mod.train_tann(prefixes, labels, vocab.size, hp)
            elif args.arch == "lstm":
                hp = lstm_mod.LstmHyperparams(
                    d=args.dim, h=args.hidden, bag_hours=args.bag_hours, lr=args.lr,
                    epochs=args.epochs, batch_size=args.batch, seed=seed, max_bags=args.max_bags,
                )
                model, _ = lstm_mod.train_lstm(prefixes, labels, vocab.size, hp)
            else:
                hp = stumps_mod.StumpHyperparams(rounds=args.rounds, min_support=args.min_support, seed=seed)
                model = stumps_mod.train_stumps(prefixes, labels, hp)
        except ValueError as exc:
            raise DataError(f"train: {exc}") from exc
        models_mod.save_model(model, args.out)
        extra = {"arch": args.arch, "task": args.task, "at": args.at, "n_train": len(examples)}

    write_run_manifest(
        args.out, "train", seed,
        {"timelines": args.timelines, "cohort": args.cohort, "encounters": args.encounters, "vocab": args.vocab},
        extra,
    )
    print(f"train: {args.arch} for {args.task}@{args.at} on {len(examples)} examples -> {args.out}")
    return 0


def _load_models(paths):
    loaded = []
    for p in paths:
        loaded.append(models_mod.load_model(_require_file(p, "evaluate")))
    return loaded


def _score_binary(loaded, examples, vocab) -> metrics.ScoredSet:
    probs = []
    for ex in examples:
        members = [models_mod.predict(m, ex.prefix, ex.encounter, vocab) for m in loaded]
        probs.append(models_mod.ensemble_predict(members))
    return metrics.ScoredSet(
        scores=np.array(probs, dtype=float),
        labels=np.array([bool(ex.label) for ex in examples]),
        encounter_ids=[ex.encounter_id for ex in examples],
    )


def cmd_evaluate(args) -> int:
    _fill_fallbacks(args, {"n_resamples": metrics.DEFAULT_BOOTSTRAP_RESAMPLES, "at": "plus24h", "split": "test"})
    if args.seed is None:
        raise ConfigError("evaluate: --seed is required")
    seed = int(args.seed)
    splits = tuple(args.split.split(","))
    unknown = set(splits) - set(cohort_mod.SPLIT_BINS)
    if unknown:
        raise ConfigError(f"evaluate: unknown split {sorted(unknown)}")

    sweep_pairs = [m for m in args.model if "=" in m]
    if sweep_pairs and len(sweep_pairs) != len(args.model):
        raise ConfigError("evaluate: mix of tag=path and plain model paths")

    if args.task == "diagnoses":
        return _evaluate_diagnoses(args, splits, seed)

    if sweep_pairs:
        rows = []
        for pair in sweep_pairs:
            tag, _, path = pair.partition("=")
            if tag not in cohort_mod.TASK_TIME_TAGS[args.task]:
                raise ConfigError(f"evaluate: {tag} not in the {args.task} grid")
            examples, vocab = _examples(args, "evaluate", splits, "evaluate", tag=tag)
            scored = _score_binary(_load_models([path]), examples, vocab)
            try:
                row = metrics.earliness_curve({tag: scored}, args.task, seed, args.n_resamples)[0]
            except metrics.DegenerateLabelsError as exc:
                raise DataError(f"evaluate: {exc}") from exc
            rows.append(row)
        order = {t: i for i, t in enumerate(ALL_TAGS)}
        rows.sort(key=lambda r: order[r["time_tag"]])
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"task": args.task, "seed": seed, "curve": rows}, fh, sort_keys=True, indent=2)
        _write_table(args.out + ".tsv", rows, ("task", "time_tag", "auroc", "ci_low", "ci_high", "n"))
        if args.figures_dir:
            os.makedirs(args.figures_dir, exist_ok=True)
            plots.save_earliness_figure(rows, os.path.join(args.figures_dir, f"earliness_{args.task}.png"))
        write_run_manifest(args.out, "evaluate", seed, {"cohort": args.cohort}, {"sweep": True})
        print(f"evaluate: earliness curve with {len(rows)} points -> {args.out}")
        return 0

    examples, vocab = _examples(args, "evaluate", splits, "evaluate")
    loaded = _load_models(args.model)
    scored = _score_binary(loaded, examples, vocab)
    try:
        report = metrics.evaluate_scored_set(
            scored, args.task, args.at, seed, n_resamples=args.n_resamples, with_ci=not args.no_ci
        )
    except metrics.DegenerateLabelsError as exc:
        raise DataError(f"evaluate: {exc}") from exc
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    flat = report.to_dict()
    flat.pop("calibration")
    _write_table(args.out + ".tsv", [flat], tuple(flat))
    if args.figures_dir:
        os.makedirs(args.figures_dir, exist_ok=True)
        plots.save_calibration_figure(
            report.calibration,
            os.path.join(args.figures_dir, f"calibration_{args.task}_{args.at}.png"),
            title=f"{args.task} at {args.at}",
        )
    write_run_manifest(
        args.out, "evaluate", seed,
        {"cohort": args.cohort, **{f"model{i}": p for i, p in enumerate(args.model)}},
        {"task": args.task, "at": args.at, "split": args.split},
    )
    print(f"evaluate: {args.task}@{args.at} AUROC {report.auroc:.4f} (n={report.n}) -> {args.out}")
    return 0


def _evaluate_diagnoses(args, splits, seed) -> int:
    if len(args.model) != 1 or "=" in args.model[0]:
        raise ConfigError("evaluate: diagnoses takes exactly one multi-label checkpoint")
    model = models_mod.load_model(_require_file(args.model[0], "evaluate"))
    if not getattr(model, "codes", None):
        raise ConfigError("evaluate: checkpoint is not a diagnoses head")
    test_examples, vocab = _examples(args, "evaluate", splits, "evaluate")
    val_examples, _ = _examples(args, "evaluate", ("val",), "evaluate")

    def score_matrix(examples):
        mat = np.vstack([np.atleast_1d(model.predict(ex.prefix)) for ex in examples])
        lab = np.zeros_like(mat, dtype=bool)
        for i, ex in enumerate(examples):
            for j, code in enumerate(model.codes):
                lab[i, j] = code in ex.label
        return mat, lab

    val_scores, val_labels = score_matrix(val_examples)
    test_scores, test_labels = score_matrix(test_examples)
    try:
        threshold = metrics.choose_threshold(val_scores, val_labels)
        f1 = metrics.micro_f1(test_scores, test_labels, threshold)
        per_code = {
            code: metrics.ScoredSet(test_scores[:, j], test_labels[:, j])
            for j, code in enumerate(model.codes)
        }
        weighted, excluded = metrics.weighted_auroc(per_code)
    except metrics.DegenerateLabelsError as exc:
        raise DataError(f"evaluate: {exc}") from exc
    payload = {
        "task": "diagnoses",
        "time_tag": args.at,
        "weighted_auroc": weighted,
        "micro_f1": f1,
        "threshold": threshold,
        "n": len(test_examples),
        "n_codes": len(model.codes),
        "codes_excluded_from_auroc": excluded,
        "seed": seed,
        "ci": None,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
    flat = dict(payload)
    flat["codes_excluded_from_auroc"] = ",".join(excluded)
    _write_table(args.out + ".tsv", [flat], tuple(flat))
    write_run_manifest(args.out, "evaluate", seed, {"model": args.model[0]}, {"task": "diagnoses"})
    print(f"evaluate: diagnoses@{args.at} weighted AUROC {weighted:.4f}, micro-F1 {f1:.4f}")
    return 0


def _write_table(path, rows, columns) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(row[c]) for c in columns) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_explain(args) -> int:
    model = models_mod.load_model(_require_file(args.model, "explain"))
    timelines, encounters, labels, split, vocab = _load_pipeline_state(args, "explain")
    if args.encounter not in encounters:
        raise DataError(f"explain: unknown encounter {args.encounter}")
    e = encounters[args.encounter]
    if args.at not in cohort_mod.TASK_TIME_TAGS[args.task]:
        raise ConfigError(f"explain: {args.task} is not predicted at {args.at}")
    tl = timelines.get(e.patient_id)
    if tl is None:
        raise DataError(f"explain: no timeline for patient {e.patient_id}")
    prefix = timeline.slice_at(tl, cohort_mod.resolve_time_tag(e, args.at))
    if args.task in ("readmission", "diagnoses"):
        prefix = cohort_mod.strip_index_billing(prefix, e)

    if isinstance(model, tann_mod.PerModalityTann):
        score = model.predict(prefix)
        attributions = []
        for modality, member in sorted(model.members.items()):
            sub = timeline.TimelinePrefix(
                patient_id=prefix.patient_id,
                occurrences=[o for o in prefix.occurrences if o.source_resource_type == modality],
                prediction_time=prefix.prediction_time,
            )
            attributions.extend(explain_mod.attention_attribution(member, sub, vocab))
        attributions.sort(key=lambda a: -a.weight)
    elif isinstance(model, tann_mod.TannModel):
        score = float(model.predict(prefix))
        attributions = explain_mod.attention_attribution(model, prefix, vocab)
    else:
        score = float(models_mod.predict(model, prefix, e, vocab))
        attributions = explain_mod.occlusion_attribution(model, prefix, args.top_k, vocab, e)

    baseline_score = None
    if args.baseline_model:
        baseline = models_mod.load_model(_require_file(args.baseline_model, "explain"))
        baseline_score = float(models_mod.predict(baseline, prefix, e, vocab))

    report = explain_mod.render_report(
        score, attributions, e, prefix, vocab, args.task, args.at,
        baseline_score=baseline_score, max_highlights=args.top_k,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(explain_mod.report_to_json(report))
    if args.html:
        with open(args.html, "w", encoding="utf-8") as fh:
            fh.write(explain_mod.report_to_html(report))
    if args.figure:
        plots.save_attribution_figure(report, args.figure)
    write_run_manifest(args.out, "explain", None, {"model": args.model}, {"encounter": args.encounter})
    print(f"explain: {args.encounter} {args.task}@{args.at} score {score:.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_pipeline_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timelines", help="timeline archive from build-vocab")
    p.add_argument("--cohort", help="cohort manifest TSV")
    p.add_argument("--encounters", help="encounters TSV from the cohort stage")
    p.add_argument("--vocab", help="vocabulary JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehrseq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic resource stream with known signal")
    p.add_argument("--config", dest="synth_config", required=True)
    p.add_argument("--out", required=True, help="NDJSON resource stream")
    p.add_argument("--manifest", required=True, help="ground-truth TSV")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse and validate a resource stream")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--archive", required=True, help="validated NDJSON archive")
    p.add_argument("--report", required=True, help="ingest report JSON")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cohort", help="apply inclusions, label tasks, split patients")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="cohort manifest TSV")
    p.add_argument("--encounters", required=True, help="eligible encounters TSV")
    p.add_argument("--seed", type=int)
    p.add_argument("--planned-rules", dest="planned_rules")
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("build-vocab", help="fit vocabulary and quantizer, write timelines")
    p.add_argument("--archive", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--min-count", dest="min_count", type=int, default=5)
    p.add_argument("--vocab", required=True)
    p.add_argument("--quantizer", required=True)
    p.add_argument("--timelines", required=True)
    p.add_argument("--dump-text", dest="dump_text", help="also write a text dump of the archive")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train one architecture for one task at one timepoint")
    _add_pipeline_inputs(p)
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--task", required=True, choices=cohort_mod.TASKS)
    p.add_argument("--arch", required=True, choices=ARCHES)
    p.add_argument("--at", required=True, type=_time_tag)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--baseline-kind", dest="baseline_kind", choices=baselines_mod.BASELINE_KINDS)
    p.add_argument("--baseline-config", dest="baseline_config")
    p.add_argument("--per-modality", dest="per_modality", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--att-dim", dest="att_dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--min-support", dest="min_support", type=int)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--max-bags", dest="max_bags", type=int)
    p.add_argument("--bag-hours", dest="bag_hours", type=float)
    p.add_argument("--code-min-count", dest="code_min_count", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a split and write the metrics report")
    _add_pipeline_inputs(p)
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("--task", required=True, choices=cohort_mod.TASKS)
    p.add_argument("--at", type=_time_tag)
    p.add_argument(
        "--model", action="append", required=True,
        help="checkpoint path; repeat for a mean-probability ensemble, or tag=path pairs for an earliness sweep",
    )
    p.add_argument("--split")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--n-resamples", dest="n_resamples", type=int)
    p.add_argument("--no-ci", dest="no_ci", action="store_true")
    p.add_argument("--figures-dir", dest="figures_dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="attribution report for one prediction")
    _add_pipeline_inputs(p)
    p.add_argument("--model", required=True)
    p.add_argument("--encounter", required=True)
    p.add_argument("--task", required=True, choices=cohort_mod.TASKS)
    p.add_argument("--at", required=True, type=_time_tag)
    p.add_argument("--out", required=True)
    p.add_argument("--html")
    p.add_argument("--figure")
    p.add_argument("--top-k", dest="top_k", type=int, default=20)
    p.add_argument("--baseline-model", dest="baseline_model")
    p.set_defaults(func=cmd_explain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_defaults(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

Subcommands: preprocess, features, synth, split, train, recognize, combine,
evaluate, experiment.  Configs are UTF-8 JSON; exit code 2 flags validation
failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import eval_harness, features, ink_model, preprocess, recognizer, rover_combine
from .errors import InkRecogError
from .hmm import TrainConfig, model_from_json, model_to_json


def _read_json(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _load_preprocess_config(path: str | None) -> preprocess.PreprocessConfig:
    if not path:
        return preprocess.PreprocessConfig()
    doc = _read_json(path)
    if "smoothing_kernel" in doc:
        doc["smoothing_kernel"] = tuple(doc["smoothing_kernel"])
    return preprocess.PreprocessConfig(**doc)


def _cmd_preprocess(args) -> int:
    cfg = _load_preprocess_config(args.config)
    trace = ink_model.load_ink(Path(args.infile).read_bytes())
    clean = preprocess.run_online_pipeline(trace, cfg)
    Path(args.out).write_bytes(ink_model.save_ink(clean))
    if args.render:
        image = ink_model.render_offline(clean, scale=args.render_scale,
                                         pen_width=1, margin=1)
        Path(args.render).write_bytes(ink_model.save_pgm(image))
    return 0


def _cmd_features(args) -> int:
    path = Path(args.infile)
    if path.suffix == ".pgm":
        image = ink_model.load_pgm(path.read_bytes())
        seq = features.extract_offline_windows(image)
    else:
        trace = ink_model.load_ink(path.read_bytes())
        seq = features.extract_online_features(trace, args.resample_distance)
    Path(args.out).write_text(features.dump_features(seq), encoding="utf-8")
    return 0


def _cmd_synth(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    cfg = eval_harness.SynthConfig(**doc.get("synth", {}))
    alphabet = recognizer.synthetic_alphabet(cfg.alphabet_size)
    if args.lexicon:
        words = [w for w in Path(args.lexicon).read_text(encoding="utf-8").split() if w]
        lexicon = recognizer.Lexicon(words=tuple(words))
    else:
        lexicon = eval_harness.make_lexicon(alphabet, doc.get("lexicon_size", 8))
    traces = eval_harness.synth_dataset(cfg, lexicon, args.n_lines)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        (outdir / f"{trace.sample_id}.json").write_bytes(ink_model.save_ink(trace))
    print(f"wrote {len(traces)} traces to {outdir}")
    return 0


def _cmd_split(args) -> int:
    ids = [w for w in Path(args.ids).read_text(encoding="utf-8").split() if w]
    split = eval_harness.split_four_stages(ids, seed=args.seed)
    doc = {stage: list(getattr(split, stage))
           for stage in ("train", "validation_meta", "validation_lm", "test")}
    Path(args.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return 0


def _cmd_train(args) -> int:
    alphabet = recognizer.synthetic_alphabet(args.alphabet_size)
    samples = []
    for path in sorted(Path(args.traces).glob("*.json")):
        trace = ink_model.load_ink(path.read_bytes())
        if trace.transcript is None:
            continue
        seq = features.extract_online_features(trace, args.resample_distance)
        samples.append((seq, list(trace.transcript)))
    cfg = TrainConfig(max_iterations=args.iterations, target_components=args.components)
    bank = recognizer.train_models(samples, alphabet, cfg, n_states=args.states)
    doc = {form: json.loads(model_to_json(m)) for form, m in bank.models.items()}
    Path(args.out).write_text(json.dumps({"n_states": bank.n_states,
                                          "dim": bank.dim,
                                          "models": doc}), encoding="utf-8")
    print(f"trained {len(bank.models)} form models "
          f"({len(bank.uncovered)} uncovered)")
    return 0


def _load_bank(path: str) -> recognizer.ModelBank:
    doc = _read_json(path)
    models = {form: model_from_json(json.dumps(m))
              for form, m in doc["models"].items()}
    return recognizer.ModelBank(models=models, n_states=doc["n_states"],
                                dim=doc["dim"])


def _cmd_recognize(args) -> int:
    alphabet = recognizer.synthetic_alphabet(args.alphabet_size)
    bank = _load_bank(args.bank)
    words = [w for w in Path(args.lexicon).read_text(encoding="utf-8").split() if w]
    lexicon = recognizer.Lexicon(words=tuple(words))
    transcripts = []
    for path in sorted(Path(args.traces).glob("*.json")):
        trace = ink_model.load_ink(path.read_bytes())
        seq = features.extract_online_features(trace, args.resample_distance)
        transcripts.append(recognizer.recognize_line(
            seq, lexicon, bank, alphabet,
            system_id=args.system_id, sample_id=trace.sample_id))
    Path(args.out).write_text(recognizer.save_hypotheses(transcripts),
                              encoding="utf-8")
    return 0


def _cmd_combine(args) -> int:
    ranking = rover_combine.SystemRanking(systems=tuple(
        w for w in Path(args.ranking).read_text(encoding="utf-8").split() if w))
    params = (rover_combine.AlignmentParams.strict_time()
              if args.time_mode == "strict" else rover_combine.AlignmentParams())
    per_sample: dict[str, list] = {}
    for path in args.hyps:
        for tr in recognizer.load_hypotheses(Path(path).read_text(encoding="utf-8")):
            per_sample.setdefault(tr.sample_id, []).append(tr)
    merged = [rover_combine.combine(hyps, params, ranking)
              for hyps in per_sample.values()]
    Path(args.out).write_text(recognizer.save_hypotheses(merged), encoding="utf-8")
    return 0


def _cmd_evaluate(args) -> int:
    hyps = recognizer.load_hypotheses(Path(args.hyp).read_text(encoding="utf-8"))
    refs = {}
    for path in sorted(Path(args.refs).glob("*.json")):
        trace = ink_model.load_ink(path.read_bytes())
        if trace.transcript is not None:
            refs[trace.sample_id] = list(trace.transcript)
    pairs = [(tr.word_list(), refs[tr.sample_id])
             for tr in hyps if tr.sample_id in refs]
    report = eval_harness.score_corpus(pairs)
    print(json.dumps(dataclasses.asdict(report), indent=2))
    return 0


def _cmd_experiment(args) -> int:
    cfg = (eval_harness.ExperimentConfig.from_dict(_read_json(args.config))
           if args.config else eval_harness.ExperimentConfig())
    report = eval_harness.run_experiment(cfg, seed=args.seed)
    print(report.to_markdown())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2),
                                  encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inkrecog")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean an ink trace")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--render", help="also write a PGM rendering")
    p.add_argument("--render-scale", type=float, default=10.0)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("features", help="extract a feature dump")
    p.add_argument("--in", dest="infile", required=True,
                   help="trace .json or image .pgm")
    p.add_argument("--out", required=True)
    p.add_argument("--resample-distance", type=float, default=0.15)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-lines", type=int, default=40)
    p.add_argument("--config")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="four-stage dataset split")
    p.add_argument("--ids", required=True, help="file of sample ids")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train form models from traces")
    p.add_argument("--traces", required=True, help="directory of trace .json")
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet-size", type=int, default=10)
    p.add_argument("--states", type=int, default=8)
    p.add_argument("--iterations", type=int, default=4)
    p.add_argument("--components", type=int, default=1)
    p.add_argument("--resample-distance", type=float, default=0.15)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("recognize", help="decode traces against a lexicon")
    p.add_argument("--traces", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet-size", type=int, default=10)
    p.add_argument("--system-id", default="sys")
    p.add_argument("--resample-distance", type=float, default=0.15)
    p.set_defaults(func=_cmd_recognize)

    p = sub.add_parser("combine", help="ROVER-combine hypothesis files")
    p.add_argument("--hyps", nargs="+", required=True)
    p.add_argument("--ranking", required=True)
    p.add_argument("--time-mode", choices=("off", "strict"), default="off")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_combine)

    p = sub.add_parser("evaluate", help="score hypotheses against transcripts")
    p.add_argument("--hyp", required=True)
    p.add_argument("--refs", required=True, help="directory of trace .json")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="full multi-system experiment")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InkRecogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""``rag-certify`` command line: ingest, index, calibrate, certify, diagnose,
lookback, train-clf, eval-clf, cross-val and synth.

Every run writes ``manifest-<subcommand>.json`` next to its outputs. Set
``RAG_CERTIFY_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

import argparse
import csv
import hashlib
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import classifier as clf_mod
from . import conformal, corpus, lookback, retrieval, synth
from .config import PipelineConfig
from .errors import MissingInput, RagCertifyError
from .jsonl import read_json, write_json, write_jsonl

logger = logging.getLogger("rag_certify")

EXIT_USAGE = 2


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Collects inputs and outputs of one subcommand and writes its manifest."""

    def __init__(self, name, cfg, out_dir):
        self.name, self.cfg = name, cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs, self.outputs = {}, []

    def input(self, path):
        if path is not None:
            if not Path(path).is_file():
                raise MissingInput(f"{path}: no such file")
            self.inputs[Path(path).name] = _digest(path)
        return path

    def output(self, name):
        self.outputs.append(name)
        return self.out_dir / name

    def finish(self):
        write_json(self.out_dir / f"manifest-{self.name}.json", {
            "subcommand": self.name,
            "tool_version": __version__,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.to_record(),
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
        })


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args, cfg, run):
    docs = corpus.load_corpus(run.input(args.corpus))
    qa = corpus.load_qa_dataset(run.input(args.qa), {d.doc_id for d in docs})
    chunks = corpus.chunk_corpus(docs, cfg.chunk_size)
    corpus.save_chunks(run.output("chunks.jsonl"), chunks)
    corpus.save_qa(run.output("qa.jsonl"), qa)
    logger.info("ingested %d documents into %d chunks, %d questions", len(docs), len(chunks), len(qa))


def cmd_index(args, cfg, run):
    chunks = corpus.load_chunks(run.input(args.chunks))
    index = retrieval.build_index(chunks)
    index.save(run.output("index.json"))
    qa = corpus.load_qa_dataset(run.input(args.qa)) if args.qa else None
    if args.external_scores:
        qa_ids = {q.qa_id for q in qa} if qa is not None else None
        results = retrieval.load_external_scores(run.input(args.external_scores), index.doc_of,
                                                 qa_ids, cfg.K)
    elif qa is not None:
        results = [retrieval.retrieve_top_k(index, q.question, cfg.K, q.qa_id,
                                            cfg.bm25_k1, cfg.bm25_b) for q in qa]
    else:
        return
    retrieval.save_results(run.output("retrieval.jsonl"), results)


def _load_calibration_scores(args, cfg, run):
    if args.scores:
        return conformal.load_scores(run.input(args.scores))
    if not (args.retrieval and args.chunks and args.qa):
        raise RagCertifyError("give --scores, or all of --retrieval, --chunks and --qa")
    results = retrieval.load_results(run.input(args.retrieval))
    text = {c.chunk_id: c.text for c in corpus.load_chunks(run.input(args.chunks))}
    qa = {q.qa_id: q for q in corpus.load_qa_dataset(run.input(args.qa))}
    return conformal.build_calibration_scores(results, text, qa, cfg.similarity)


def cmd_calibrate(args, cfg, run):
    from .plotting import plot_calibration

    scores = _load_calibration_scores(args, cfg, run)
    model, normed, labels = conformal.calibrate(scores, cfg.alpha, cfg.beta, cfg.K,
                                                cfg.delta_formula)
    model.save(run.output("conformal_model.json"))
    conformal.save_scores(run.output("calibration_scores.jsonl"), normed, labels)
    plot_calibration(normed, labels, model, run.output("calibration.png"))
    logger.info("q_hat=%.6g from %d correct chunks (s_thres=%.4g)",
                model.q_hat, model.n_correct, model.s_thres)


def cmd_certify(args, cfg, run):
    model = conformal.ConformalModel.load(run.input(args.model))
    results = retrieval.load_results(run.input(args.retrieval))
    labels = [conformal.predict_trust(model, r) for r in results]
    write_jsonl(run.output("trust_labels.jsonl"), (t.to_record() for t in labels))
    if labels:
        report = conformal.aggregate_diagnostics(labels, model.alpha)
        write_json(run.output("diagnostics.json"), report.to_record())
    if args.filter:
        kept = [conformal.filter_chunks(conformal.normalize_result(model, r), t)
                for r, t in zip(results, labels)]
        retrieval.save_results(run.output("filtered_retrieval.jsonl"), kept)


def cmd_diagnose(args, cfg, run):
    from .plotting import plot_alpha_sweep

    cal = conformal.load_scores(run.input(args.scores))
    holdout = conformal.load_scores(run.input(args.holdout)) if args.holdout else None
    if args.model:
        model = conformal.ConformalModel.load(run.input(args.model))
    else:
        model = conformal.calibrate(cal, cfg.alpha, cfg.beta, cfg.K, cfg.delta_formula)[0]
    evaluation = holdout if holdout is not None else cal
    m1, m2 = conformal.question_metrics(model, evaluation)
    report = conformal.diagnostics_from_metrics(m1, m2, model.alpha)
    report.extra = {"evaluated_on": "holdout" if holdout is not None else "calibration",
                    "q_hat": model.q_hat, "s_thres": model.s_thres}
    if holdout is not None:
        report.coverage = conformal.coverage_audit(model, holdout)
        report.extra["coverage_upper"] = 1.0 - model.alpha + 1.0 / (model.n_correct + 1)
    write_json(run.output("diagnostics.json"), report.to_record())
    if args.alpha_sweep:
        alphas = conformal.parse_sweep(args.alpha_sweep)
        swept = holdout if args.sweep_on == "holdout" and holdout is not None else cal
        rows = conformal.alpha_sweep(cal, alphas, cfg.beta, cfg.K, swept, cfg.delta_formula)
        write_csv(run.output("alpha_sweep.csv"), ["alpha", "mean_m1", "mean_m2"],
                  [(f"{a:.10g}", f"{x:.10g}", f"{y:.10g}") for a, x, y in rows])
        plot_alpha_sweep(rows, run.output("alpha_sweep.png"))


def cmd_lookback(args, cfg, run):
    dumps = lookback.load_dumps(run.input(args.dumps))
    feats = [lookback.extract_features(d, cfg.lr_mode, cfg.K, cfg.denominator) for d in dumps]
    if cfg.normalize_features:
        feats = [lookback.normalize_features(f) for f in feats]
    lookback.save_features(run.output("features.jsonl"), feats)


def _samples(args, run):
    feats = lookback.load_features(run.input(args.features))
    return clf_mod.join_labels(feats, clf_mod.load_labels(run.input(args.labels)))


def cmd_train_clf(args, cfg, run):
    samples = _samples(args, run)
    train, valid = clf_mod.split_train_valid(samples, cfg.seed)
    model = clf_mod.fit(train, cfg.clf_max_iter, cfg.clf_l2, trained_on=Path(args.features).stem)
    model.save(run.output("classifier.json"))
    write_json(run.output("split.json"), {"seed": cfg.seed,
                                          "train": [s.qa_id for s in train],
                                          "valid": [s.qa_id for s in valid]})
    write_json(run.output("train_report.json"), clf_mod.evaluate(model, train).to_record())


def cmd_eval_clf(args, cfg, run):
    model = clf_mod.FactualityClassifier.load(run.input(args.classifier))
    samples = _samples(args, run)
    if args.split_file:
        keep = set(read_json(run.input(args.split_file))["valid"])
        samples = [s for s in samples if s.qa_id in keep]
    write_json(run.output("eval_report.json"), clf_mod.evaluate(model, samples).to_record())


def cmd_cross_val(args, cfg, run):
    from .plotting import plot_auroc_matrix

    groups = {}
    for spec in args.group:
        name, _, paths = spec.partition("=")
        feats_path, _, labels_path = paths.partition(":")
        if not (name and feats_path and labels_path):
            raise ValueError(f"--group must be NAME=FEATURES:LABELS, got '{spec}'")
        feats = lookback.load_features(run.input(feats_path))
        groups[name] = clf_mod.join_labels(feats, clf_mod.load_labels(run.input(labels_path)))
    names, matrix = clf_mod.cross_validate_groups(groups, cfg.seed, cfg.clf_max_iter, cfg.clf_l2)
    write_csv(run.output("auroc_matrix.csv"), ["source", *names],
              [[n, *(f"{v:.10g}" for v in row)] for n, row in zip(names, matrix)])
    plot_auroc_matrix(names, matrix, run.output("auroc_matrix.png"))


def cmd_synth(args, cfg, run):
    settings = dict(cfg.synth)
    settings.update({k: v for k, v in {
        "scenario": args.scenario, "n_questions": args.n_questions, "n_samples": args.n_samples,
        "feature_sep": args.feature_sep, "failure_fraction": args.failure_fraction,
    }.items() if v is not None})
    settings.update(seed=cfg.seed, K=cfg.K)
    settings.setdefault("lookback_mode", cfg.lr_mode)
    scfg = synth.SynthConfig.from_record(settings)
    cal, hold = synth.gen_retrieval_scenario(scfg)
    conformal.save_scores(run.output("calibration_scores.jsonl"), cal)
    conformal.save_scores(run.output("holdout_scores.jsonl"), hold)
    retrieval.save_results(run.output("holdout_retrieval.jsonl"), hold.to_results())
    dumps, gamma = synth.gen_attention_dataset(scfg)
    lookback.save_dumps(run.output("attention.jsonl"), dumps)
    write_jsonl(run.output("labels.jsonl"),
                ({"qa_id": q, "gamma_ac": float(g)} for q, g in gamma.items()))
    write_json(run.output("synth_config.json"), scfg.to_record())


COMMANDS = {
    "ingest": cmd_ingest, "index": cmd_index, "calibrate": cmd_calibrate,
    "certify": cmd_certify, "diagnose": cmd_diagnose, "lookback": cmd_lookback,
    "train-clf": cmd_train_clf, "eval-clf": cmd_eval_clf, "cross-val": cmd_cross_val,
    "synth": cmd_synth,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--k", dest="K", type=int)
    common.add_argument("--chunk-size", type=int)
    common.add_argument("--mode", choices=("cw", "fc"))
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", default=".")

    parser = argparse.ArgumentParser(prog="rag-certify", description=__doc__.split("\n\n")[0].replace("\n", " "))
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="chunk a corpus, validate QA triplets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--qa", required=True)

    p = sub.add_parser("index", parents=[common], help="BM25 index and top-K retrieval")
    p.add_argument("--chunks", required=True)
    p.add_argument("--qa")
    p.add_argument("--external-scores", help="score file replacing BM25 (e.g. reranker output)")

    p = sub.add_parser("calibrate", parents=[common], help="fit the conformal model")
    p.add_argument("--scores", help="pre-computed calibration score file")
    p.add_argument("--retrieval")
    p.add_argument("--chunks")
    p.add_argument("--qa")

    p = sub.add_parser("certify", parents=[common], help="trust-label retrieval results")
    p.add_argument("--model", required=True)
    p.add_argument("--retrieval", required=True)
    p.add_argument("--filter", action="store_true", help="also write trusted-only results")

    p = sub.add_parser("diagnose", parents=[common], help="m1/m2 diagnostics and coverage audit")
    p.add_argument("--scores", required=True, help="calibration score file")
    p.add_argument("--holdout", help="holdout score file for the coverage audit")
    p.add_argument("--model")
    p.add_argument("--alpha-sweep", metavar="START:STOP:STEP")
    p.add_argument("--sweep-on", choices=("calibration", "holdout"), default="calibration",
                   help="question set the alpha sweep averages m1/m2 over")

    p = sub.add_parser("lookback", parents=[common], help="lookback-ratio features")
    p.add_argument("--dumps", required=True)

    clf_help = {"train-clf": "fit the factuality classifier", "eval-clf": "AUROC of a trained classifier"}
    for name in ("train-clf", "eval-clf"):
        p = sub.add_parser(name, parents=[common], help=clf_help[name])
        p.add_argument("--features", required=True)
        p.add_argument("--labels", required=True)
        if name == "eval-clf":
            p.add_argument("--classifier", required=True)
            p.add_argument("--split-file", help="split.json from train-clf; evaluate its valid part")

    p = sub.add_parser("cross-val", parents=[common], help="group-by-group AUROC matrix")
    p.add_argument("--group", action="append", required=True, metavar="NAME=FEATURES:LABELS")

    p = sub.add_parser("synth", parents=[common], help="synthetic scores, attention and labels")
    p.add_argument("--scenario", choices=synth.SCENARIOS)
    p.add_argument("--n-questions", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--feature-sep", type=float)
    p.add_argument("--failure-fraction", type=float)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("RAG_CERTIFY_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        overrides = {"alpha": args.alpha, "beta": args.beta, "K": args.K,
                     "chunk_size": args.chunk_size, "lr_mode": args.mode, "seed": args.seed}
        cfg = PipelineConfig.from_file(args.config, overrides)
        run = Run(args.command, cfg, args.out_dir)
        if args.config:
            run.input(args.config)
        COMMANDS[args.command](args, cfg, run)
        run.finish()
    except RagCertifyError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error [usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())

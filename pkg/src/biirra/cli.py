"""Command line entry point: ``biirra <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import TrainConfig, parse_overrides, read_config_file
from .data import SyntheticSpec

log = logging.getLogger("biirra")


# -- shared helpers ------------------------------------------------------------

def _add_train_flags(p):
    group = p.add_argument_group("training config (overrides --config)")
    for f in dataclasses.fields(TrainConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", default=None,
                           metavar=f.name.upper())
    p.add_argument("--config", help="key = value file with TrainConfig fields")


def _train_config(args):
    values = read_config_file(args.config) if args.config else {}
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    values.update(parse_overrides(flags))
    return TrainConfig(**values)


def _load_data(directory):
    from .data import read_dataset

    d = Path(directory)
    meta = json.loads((d / "vocab.json").read_text())
    return read_dataset(d / "train.jsonl"), read_dataset(d / "test.jsonl"), meta


def _write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _report_text(report, path):
    from .train_eval import format_report

    suffix = Path(path).suffix.lower() if path else ""
    if suffix == ".json":
        return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    rows = [(lang, s) for lang, s in report.languages.items()]
    if suffix == ".csv":
        out = "language,r1,r5,r10,map,n_queries,rerank_k,stage\n"
        return out + "".join(f"{lang},{s.r1!r},{s.r5!r},{s.r10!r},{s.map!r},{s.n_queries},"
                             f"{report.rerank_k},{report.stage}\n" for lang, s in rows)
    if suffix == ".md":
        out = "| language | R@1 | R@5 | R@10 | mAP |\n|---|---|---|---|---|\n"
        return out + "".join(f"| {lang} | {s.r1:.4f} | {s.r5:.4f} | {s.r10:.4f} | {s.map:.4f} |\n"
                             for lang, s in rows)
    return format_report(report) + "\n"


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args):
    from .data import generate_synthetic_dataset, write_dataset
    from .ldat import corpus_from_triplets, write_corpus

    test_ids = args.test_identities if args.test_identities is not None else max(1, args.identities // 3)
    spec = SyntheticSpec(n_identities=args.identities, test_identities=test_ids,
                         images_per_identity=args.images_per_id, n_slots=args.slots,
                         n_values=args.values, noise_text=args.noise_text,
                         noise_visual=args.noise_visual, seed=args.seed)
    ds = generate_synthetic_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.jsonl", ds.train)
    write_dataset(out / "test.jsonl", ds.test)
    meta = dict(ds.vocab.to_dict(), vocab_size=len(ds.vocab), words=ds.vocab.words,
                spec=dataclasses.asdict(spec))
    _write_text(out / "vocab.json", json.dumps(meta, indent=2) + "\n")
    write_corpus(out / "corpus.jsonl", corpus_from_triplets(ds.train, ds.vocab))
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test triplets to {out}")
    return 0


def cmd_ldat(args):
    from .data import Vocab
    from .ldat import (HttpChatBackend, LexiconOverlapScorer, MockTranslator, read_corpus,
                       run_ldat, write_output, write_report)

    meta = json.loads(Path(args.vocab).read_text())
    lexicon = Vocab(meta["n_slots"], meta["n_values"]).lexicon()
    if args.backend == "mock":
        backend = MockTranslator(lexicon, seed=args.seed, noise=args.noise, manifest_dir=args.manifest_dir)
    else:
        backend = HttpChatBackend.from_env(manifest_dir=args.manifest_dir)
    corpus = read_corpus(args.corpus)
    records, report = run_ldat(corpus, backend, LexiconOverlapScorer(lexicon), args.target_language,
                               args.theta, args.workers)
    write_output(args.out, records)
    if args.report:
        write_report(args.report, report)
    print(json.dumps(report.to_json()))
    return 0


def cmd_train(args):
    from .encoders import Model, save_checkpoint
    from .train_eval import model_config_for, train

    cfg = _train_config(args)
    train_set, _, meta = _load_data(args.data)
    model = Model(model_config_for(cfg, train_set, meta["vocab_size"]))
    result = train(model, train_set, cfg, log_path=args.log)
    save_checkpoint(model, args.checkpoint, {"train_config": cfg.to_dict(), "steps": result.steps})
    last = result.log[-1] if result.log else {}
    print(f"trained {result.steps} steps in {result.seconds:.1f}s; final total {last.get('total')}")
    return 0


def cmd_eval(args):
    from .encoders import load_checkpoint
    from .train_eval import evaluate

    model, extra = load_checkpoint(args.checkpoint)
    _, test_set, _ = _load_data(args.data)
    stored = extra.get("train_config", {})
    k = args.rerank_k if args.rerank_k is not None else stored.get("rerank_k", 16)
    blend = args.blend if args.blend is not None else stored.get("rerank_blend", 0.0)
    report = evaluate(model, test_set, k, blend)
    text = _report_text(report, args.out)
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(_report_text(report, None))
    return 0


def cmd_ablate(args):
    from .train_eval import run_ablation

    cfg = _train_config(args)
    train_set, test_set, meta = _load_data(args.data)
    only = set(args.only.split(",")) if args.only else None
    table = run_ablation(cfg, args.axis, train_set, test_set, meta["vocab_size"], only=only,
                         on_variant=lambda v, r: log.info("variant %s done", v.label))
    md = table.to_markdown()
    if args.out:
        _write_text(args.out, table.to_csv() if args.out.endswith(".csv") else md)
    sys.stdout.write(md)
    return 0


def cmd_gradcheck(args):
    from .gradsuite import COMPONENTS, TOLERANCE, run_gradchecks

    comps = COMPONENTS if args.component == "all" else (args.component,)
    results = run_gradchecks(comps, n_samples=args.samples, step=args.step, seed=args.seed)
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{r.component:>6}: max rel error {r.max_rel_error:.3e} over {r.n_coordinates} "
              f"coordinates [{'PASS' if r.passed else 'FAIL'} < {TOLERANCE:g}]")
    return 0 if ok else 1


# -- parser --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="biirra", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic bilingual dataset")
    g.add_argument("--identities", type=int, default=24)
    g.add_argument("--test-identities", type=int, default=None)
    g.add_argument("--images-per-id", type=int, default=4)
    g.add_argument("--slots", type=int, default=SyntheticSpec.n_slots, help="attribute slots")
    g.add_argument("--values", type=int, default=SyntheticSpec.n_values, help="values per slot")
    g.add_argument("--noise-text", type=float, default=0.0)
    g.add_argument("--noise-visual", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    ld = sub.add_parser("ldat", help="translate, filter and rewrite a caption corpus")
    ld.add_argument("--corpus", required=True)
    ld.add_argument("--vocab", required=True, help="vocab.json written by gen-data")
    ld.add_argument("--backend", choices=("mock", "http"), default="mock")
    ld.add_argument("--target-language", default="target")
    ld.add_argument("--theta", type=float, default=None)
    ld.add_argument("--noise", type=float, default=0.1, help="mock per-word error rate")
    ld.add_argument("--seed", type=int, default=0)
    ld.add_argument("--workers", type=int, default=1)
    ld.add_argument("--manifest-dir", default=None)
    ld.add_argument("--out", required=True)
    ld.add_argument("--report", default=None)
    ld.set_defaults(func=cmd_ldat)

    t = sub.add_parser("train", help="train on a gen-data directory")
    t.add_argument("--data", required=True)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--log", default=None, help="CSV loss log")
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval metrics on the test split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--rerank-k", type=int, default=None)
    e.add_argument("--blend", type=float, default=None)
    e.add_argument("--out", default=None, help=".json, .csv, .md or plain text")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    a.add_argument("--data", required=True)
    a.add_argument("--axis", required=True, choices=("components", "masking", "itm_inputs", "hyper"))
    a.add_argument("--only", default=None, help="comma-separated variant labels")
    a.add_argument("--out", default=None, help=".md or .csv")
    _add_train_flags(a)
    a.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the losses")
    gc.add_argument("--component", default="all", choices=("all", "itc", "a_itm", "mlm", "d_mim", "total"))
    gc.add_argument("--samples", type=int, default=3)
    gc.add_argument("--step", type=float, default=1e-5)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

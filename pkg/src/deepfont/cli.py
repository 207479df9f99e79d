"""Command-line entry point: data generation, training, compression, evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from deepfont import compress, evalsim, formats, glyphgen, network, training
from deepfont.augment import ALL_STEPS, VARIANT_STEPS
from deepfont.errors import CheckpointError, ManifestError, NumericError, RankExceededError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
log = logging.getLogger("deepfont")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(path):
    """JSON with optional sections "scae", "train", "rank" (TrainConfig fields)
    and top-level "preset", "fc_width", "class_seed"."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise DataError("config must be a JSON object")
    return cfg


def train_config(cfg, section, seed):
    d = dict(cfg.get(section, {}))
    if seed is not None:
        d["seed"] = seed
    try:
        return training.TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config section {section!r}: {exc}") from None


def _manifest(path, required=True, what="data"):
    if path is None:
        if required:
            raise UsageError(f"missing {what} manifest")
        return None
    try:
        return formats.load_manifest(path)
    except FileNotFoundError:
        raise DataError(f"no manifest at {path}") from None


def _checkpoint(path):
    try:
        return formats.load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"no checkpoint at {path}") from None


def _cnn_spec(cfg, n_classes, k):
    try:
        return network.build_cnn(cfg.get("preset", network.DESK), n_classes, k,
                                 fc_width=cfg.get("fc_width"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _steps(text):
    if text in ("", "-", "none"):
        return frozenset()
    try:
        steps = frozenset(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad step list {text!r}") from None
    if not steps <= ALL_STEPS:
        raise argparse.ArgumentTypeError(f"steps must lie in 1..6, got {text!r}")
    return steps


def _int_list(text):
    try:
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def cmd_gen(args):
    config = glyphgen.DomainConfig.for_classes(args.classes, args.class_seed)
    if args.steps is not None:
        config = glyphgen.DomainConfig(config.classes, config.augment.with_steps(args.steps))
    manifest = glyphgen.make_domain(config, args.domain, args.per_class,
                                    np.random.default_rng(args.seed), labeled=not args.unlabeled)
    path = manifest.save(args.out)
    print(f"wrote {len(manifest)} images and {path}")


def _val_split(manifest, seed, frac=0.1):
    """Hold out a fixed fraction of each class for validation."""
    rng = np.random.default_rng([seed, 99])
    labels = manifest.labels
    val = []
    for cid in np.unique(labels):
        idx = np.flatnonzero(labels == cid)
        val += list(rng.choice(idx, size=max(1, int(len(idx) * frac)), replace=False))
    keep = sorted(set(range(len(manifest))) - set(val))
    return manifest.subset(keep), manifest.subset(sorted(val))


def cmd_train_scae(args):
    syn = _manifest(args.syn, required=False)
    real = _manifest(args.real, required=False)
    steps, needs_real = training.scae_recipe(args.variant)
    if steps is not None and syn is None:
        raise UsageError(f"variant {args.variant} needs --syn")
    if needs_real and real is None:
        raise UsageError(f"variant {args.variant} needs --real")
    cfg = load_config(args.config)
    n_classes = (syn or real).n_classes
    spec = _cnn_spec(cfg, n_classes, args.k)
    val_sets = {}
    for name, path in (("N", args.val_syn), ("R", args.val_real)):
        if path is not None:
            val_sets[name] = _manifest(path).load_images()
    try:
        model, train_log = training.train_scae(args.variant, syn, real,
                                               train_config(cfg, "scae", args.seed), spec, val_sets)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = _out_dir(args.out)
    formats.save_checkpoint(out / "encoder.dfnt", model, {"variant": args.variant})
    formats.write_log_csv(out / "log.csv", train_log)
    print(f"final train MSE {train_log.records[-1].train_loss:.5f}; wrote {out / 'encoder.dfnt'}")


def _train_cnn(cfg, syn, val, k, seed, encoder=None, phase_seed=0):
    spec = _cnn_spec(cfg, syn.n_classes, k)
    tc = train_config(cfg, "train", seed)
    model = network.init_model(spec, np.random.default_rng([tc.seed, phase_seed]))
    if encoder is not None:
        model = network.import_cu(model, encoder)
    return training.train_supervised(model, syn, val, tc)


def cmd_train(args):
    cfg = load_config(args.config)
    syn = _manifest(args.syn, what="--syn")
    if not syn.labeled:
        raise DataError("--syn must be a labeled manifest")
    val = _manifest(args.val, required=False)
    if val is None:
        syn, val = _val_split(syn, args.seed or 0)
    encoder = None
    if args.scae_encoder is not None:
        encoder, _ = _checkpoint(args.scae_encoder)
        if encoder.spec.k_split != args.k:
            raise UsageError(f"encoder was trained with K={encoder.spec.k_split}, not --k {args.k}")
    model, train_log = _train_cnn(cfg, syn, val, args.k, args.seed, encoder)
    out = _out_dir(args.out)
    formats.save_checkpoint(out / "model.dfnt", model)
    formats.write_log_csv(out / "log.csv", train_log)
    print(f"final val top-1 error {train_log.records[-1].val_metric:.4f}; wrote {out / 'model.dfnt'}")


def cmd_compress(args):
    model, _ = _checkpoint(args.model)
    try:
        model.spec.index_of(args.layer)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    if args.mode == "lossless" and args.data is not None:
        cfg = load_config(args.config)
        data = _manifest(args.data)
        train, val = _val_split(data, args.seed or 0)
        model, rank_log = training.train_rank_constrained(
            model, args.layer, args.k, train, val, train_config(cfg, "rank", args.seed))
        formats.write_log_csv(out / "rank_log.csv", rank_log)
    compressed, layer = compress.factorize_model(model, args.layer, args.k, args.mode)
    report = compress.model_size_report(compressed)
    formats.save_checkpoint(out / "model.dfnt", compressed, {"compressed": args.layer,
                                                             "k": args.k, "mode": args.mode})
    formats.write_csv(out / "size_report.csv", ["layer", "dense", "stored"], report.rows()
                      + [("total", report.total_before, report.total_after)])
    print(f"{args.layer}: {layer.n_params} stored parameters; total {report.total_before} -> "
          f"{report.total_after}, ratio {report.ratio_2dp}")


def cmd_eval(args):
    model, _ = _checkpoint(args.model)
    data = _manifest(args.data)
    labels = data.labels if data.labeled else data.true_labels
    preds = evalsim.predict_manifest(model, data, args.seed or 0, args.views)
    rows = []
    for entry, p in zip(data.entries, preds):
        top = p.top_k(5)
        rows.append([entry.path, entry.class_id, " ".join(map(str, top)),
                     " ".join(f"{p.class_probs[c]:.6f}" for c in top)])
    if args.report:
        formats.write_csv(args.report, ["image", "true_class", "top5_ids", "top5_probs"], rows)
    if labels is not None and data.labeled:
        print(f"top-1 error {evalsim.topk_error(preds, labels, 1):.4f}  "
              f"top-5 error {evalsim.topk_error(preds, labels, 5):.4f}  ({len(preds)} images, "
              f"{preds[0].n_views} views)")


def cmd_similar(args):
    model, _ = _checkpoint(args.model)
    data = _manifest(args.data)
    index = evalsim.build_similarity(model, data, args.per_class, args.seed or 0)
    try:
        ranked = evalsim.most_similar(index, args.query_class, args.top)
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    rows = [(args.query_class, r, cid, f"{d:.6f}") for r, (cid, d) in enumerate(ranked, start=1)]
    header = ["query_class", "rank", "class", "distance"]
    if args.report:
        formats.write_csv(args.report, header, rows)
    else:
        print(",".join(header))
        for row in rows:
            print(",".join(map(str, row)))


def _variant_grid(args, cfg, syn, real, test):
    """Reconstruction error of each SCAE variant on held-out clean and pseudo-real sets."""
    per_class = max(1, len(syn) // syn.n_classes)
    base = glyphgen.DomainConfig.for_classes(syn.n_classes, cfg.get("class_seed", 0))
    seed = args.seed or 0
    held_n = glyphgen.make_domain(
        glyphgen.DomainConfig(base.classes, base.augment.with_steps(VARIANT_STEPS["N"])),
        glyphgen.SYN, max(1, per_class // 4), np.random.default_rng([seed, 1]))
    val_sets = {"N": held_n.load_images(), "R": test.load_images()}
    spec = _cnn_spec(cfg, syn.n_classes, args.k_list[0])
    rows = []
    for variant in args.variants:
        steps, needs_real = training.scae_recipe(variant)
        vsyn = None
        if steps is not None:
            if syn.augment_steps is not None and frozenset(syn.augment_steps) == steps:
                vsyn = syn
            else:
                vsyn = glyphgen.make_domain(
                    glyphgen.DomainConfig(base.classes, base.augment.with_steps(steps)),
                    glyphgen.SYN, per_class, np.random.default_rng([seed, 2]))
        if needs_real and real is None:
            raise UsageError(f"variant {variant} needs --real")
        _, train_log = training.train_scae(variant, vsyn, real if needs_real else None,
                                           train_config(cfg, "scae", args.seed), spec, val_sets)
        last = train_log.records[-1]
        rows.append([variant, f"{last.train_loss:.6f}", f"{last.extra['val_N']:.6f}",
                     f"{last.extra['val_R']:.6f}"])
        log.info("variant %s: %s", variant, rows[-1])
    return ["variant", "train_mse", "relative_mse_N", "relative_mse_R"], rows


def cmd_sweep_k(args):
    cfg = load_config(args.config)
    syn = _manifest(args.syn, what="--syn")
    real = _manifest(args.real, required=False)
    test = _manifest(args.test, required=False)
    if test is None:
        raise UsageError("sweep-k needs a labeled --test manifest")
    if args.variants:
        header, rows = _variant_grid(args, cfg, syn, real, test)
    else:
        train, val = _val_split(syn, args.seed or 0)
        variant = "FR" if real is not None else "F"
        header, rows = ["k", "top1_error", "top5_error"], []
        labels = test.labels if test.labeled else test.true_labels
        for k in args.k_list:
            spec = _cnn_spec(cfg, syn.n_classes, k)
            encoder, _ = training.train_scae(variant, syn, real, train_config(cfg, "scae", args.seed),
                                             spec)
            model, _ = _train_cnn(cfg, train, val, k, args.seed, encoder)
            preds = evalsim.predict_manifest(model, test, args.seed or 0)
            rows.append([k, f"{evalsim.topk_error(preds, labels, 1):.4f}",
                         f"{evalsim.topk_error(preds, labels, 5):.4f}"])
            log.info("K=%d: %s", k, rows[-1])
    formats.write_csv(args.report, header, rows)
    print(f"wrote {len(rows)} rows to {args.report}")


def build_parser():
    parser = _Parser(prog="deepfont", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="render a dataset of text-line images")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--domain", choices=glyphgen.DOMAINS, required=True)
    p.add_argument("--steps", type=_steps, help="augmentation steps for syn, e.g. 1,2,3,4")
    p.add_argument("--unlabeled", action="store_true", help="write class id -1")
    p.add_argument("--class-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-scae", help="pretrain a convolutional autoencoder")
    p.add_argument("--variant", choices=training.SCAE_VARIANTS, required=True)
    p.add_argument("--syn")
    p.add_argument("--real")
    p.add_argument("--val-syn", help="held-out clean synthetic manifest")
    p.add_argument("--val-real", help="held-out pseudo-real manifest")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_scae)

    p = sub.add_parser("train", help="supervised training on top of an imported encoder")
    p.add_argument("--scae-encoder")
    p.add_argument("--syn", required=True)
    p.add_argument("--val")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="factorize one fully connected layer")
    p.add_argument("--model", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=("lossy", "lossless"), required=True)
    p.add_argument("--data", help="labeled manifest for rank-constrained fine-tuning (lossless)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", help="classify a dataset and report top-1/top-5 error")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--views", choices=(evalsim.SINGLE, evalsim.MULTI), default=evalsim.MULTI)
    p.add_argument("--report")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("similar", help="rank font classes by feature distance")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query-class", type=int, required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--report")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_similar)

    p = sub.add_parser("sweep-k", help="train and test across decomposition points K")
    p.add_argument("--syn", required=True)
    p.add_argument("--real")
    p.add_argument("--test", help="labeled pseudo-real test manifest")
    p.add_argument("--k-list", type=_int_list, default=[2])
    p.add_argument("--variants", type=lambda s: s.split(","),
                   help="run the SCAE variant grid instead, e.g. N,S,F,R,FR")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_sweep_k)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "variants", None):
        bad = [v for v in args.variants if v not in training.SCAE_VARIANTS]
        if bad:
            parser.error(f"unknown variants {bad}")
    if getattr(args, "k", None) is not None and args.k < 1:
        parser.error("--k must be positive")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"deepfont: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ManifestError, CheckpointError, OSError) as exc:
        print(f"deepfont: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RankExceededError as exc:
        print(f"deepfont: RANK_EXCEEDED: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericError as exc:
        print(f"deepfont: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

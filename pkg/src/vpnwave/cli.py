"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, parse_levels, parse_models, parse_timeout
from .exceptions import ConfigError, DataError, TrainingError
from .flows import DEFAULT_ACTIVE_TIMEOUT, DEFAULT_MIN_PACKETS, DEFAULT_RULES, filter_min_packets, flow_count_report, meter_files
from .ingest import PcapReader
from .io import read_features_csv, read_flows_csv, write_features_csv, write_flow_counts_csv, write_flows_csv
from .models import save_model
from .pipeline import build_feature_table, load_and_evaluate, run_experiment, train_on_table
from .synth import generate_corpus, preset_profiles

logger = logging.getLogger("vpnwave")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4


def _rules_from(path):
    if not path:
        return list(DEFAULT_RULES)
    return ExperimentConfig.from_ini(path).label_rules


def _single_level(text):
    levels = parse_levels(text)
    if len(levels) != 1:
        raise ConfigError("this subcommand takes a single level count")
    return levels[0]


def cmd_ingest(args):
    lines = []
    for path in args.pcaps:
        reader = PcapReader(path)
        for _ in reader:
            pass
        lines.append(reader.summary.to_json())
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_meter(args):
    timeout = parse_timeout(args.timeout)
    flows, summaries = meter_files(
        args.pcaps, rules=_rules_from(args.labels), timeout=timeout,
        idle_timeout=parse_timeout(args.idle_timeout), workers=args.workers,
    )
    write_flows_csv(flows, args.out, timeout=timeout)
    if args.counts:
        kept = filter_min_packets(flows, args.min_pkts).kept
        write_flow_counts_csv(flow_count_report(flows, kept), args.counts)
    if args.summary:
        Path(args.summary).write_text("".join(s.to_json() + "\n" for s in summaries))
    logger.info("%d flows from %d file(s)", len(flows), len(summaries))


def cmd_extract(args):
    levels = _single_level(args.levels)
    rows, meta = read_flows_csv(args.flows)
    min_pkts = args.min_pkts if args.filter else 0
    if args.filter and args.min_pkts < 1:
        raise ConfigError(f"min_pkts must be a positive integer, got {args.min_pkts}")
    table = build_feature_table(rows, levels, args.wavelet, min_pkts, timeout=meta.get("timeout"))
    write_features_csv(table, args.out)
    logger.info("%d feature vectors of length %d", len(table), len(table.names))


def cmd_train(args):
    kinds = parse_models(args.model)
    if len(kinds) != 1:
        raise ConfigError("train fits one model; pass a single --model")
    (kind,) = kinds
    table = read_features_csv(args.features)
    model = train_on_table(table, kind, seed=args.seed, train_fraction=args.train_fraction)
    save_model(model, args.out, metadata=model.metadata_)


def cmd_evaluate(args):
    report = load_and_evaluate(args.model, args.features, use_split=not args.all_rows)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    timeout = parse_timeout(args.timeout)
    manifests = generate_corpus(preset_profiles(args.preset, args.scale), args.seed, args.out, timeout=timeout)
    logger.info("wrote %d capture(s) to %s", len(manifests), args.out)


def config_from_args(args):
    cfg = ExperimentConfig.from_ini(args.config) if args.config else ExperimentConfig()
    if args.pcaps:
        cfg.pcaps, cfg.features = list(args.pcaps), []
    if args.features:
        cfg.features, cfg.pcaps = list(args.features), []
    overrides = {
        "seed": args.seed,
        "levels": args.levels,
        "timeout": args.timeout,
        "min_pkts": args.min_pkts,
        "models": args.models,
        "out": args.out,
        "filter": args.filter,
        "wavelet": args.wavelet,
        "workers": args.workers,
        "train_fraction": args.train_fraction,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    if args.labels:
        cfg.label_rules = _rules_from(args.labels)
    return cfg.validate()


def cmd_run(args):
    bundle = run_experiment(config_from_args(args))
    for row in bundle.comparison:
        print(f"{row['model_id']:<16} acc {row['accuracy_pct']:>3}%  f1 {row['f1_pct']:>3}%")


def build_parser():
    p = argparse.ArgumentParser(prog="vpnwave", description="Wavelet-feature VPN traffic detection pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse captures and print one skip summary per file")
    s.add_argument("pcaps", nargs="+")
    s.add_argument("--out", help="write the JSON lines here instead of stdout")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("meter", help="captures to a flow table")
    s.add_argument("pcaps", nargs="+")
    s.add_argument("--out", required=True, help="flow CSV")
    s.add_argument("--timeout", default=str(DEFAULT_ACTIVE_TIMEOUT), help="active timeout in seconds or 'none'")
    s.add_argument("--idle-timeout", default="none")
    s.add_argument("--labels", help="INI file whose [labels] section maps file globs to 'label, category'")
    s.add_argument("--counts", help="also write the per-category flow-count table")
    s.add_argument("--min-pkts", type=int, default=DEFAULT_MIN_PACKETS)
    s.add_argument("--summary", help="write skip summaries as JSON lines")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_meter)

    s = sub.add_parser("extract", help="flow table to wavelet features")
    s.add_argument("--flows", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--levels", default="5")
    s.add_argument("--wavelet", default="haar")
    s.add_argument("--filter", action="store_true", help="drop flows with fewer than --min-pkts packets")
    s.add_argument("--min-pkts", type=int, default=DEFAULT_MIN_PACKETS)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="fit one detector on the training split of a feature CSV")
    s.add_argument("--features", required=True)
    s.add_argument("--model", required=True, help="rf, nn or svm")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-fraction", type=float, default=0.8)
    s.add_argument("--out", required=True, help="model JSON")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a model on the held-out split of a feature CSV")
    s.add_argument("--features", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out")
    s.add_argument("--all-rows", action="store_true", help="treat every row as a test row")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write a synthetic capture corpus with manifests")
    s.add_argument("--out", required=True)
    s.add_argument("--preset", default="demo")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--timeout", default=str(DEFAULT_ACTIVE_TIMEOUT))
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="end-to-end experiment grid")
    s.add_argument("pcaps", nargs="*")
    s.add_argument("--config")
    s.add_argument("--features", nargs="+")
    s.add_argument("--seed", type=int)
    s.add_argument("--levels", help="e.g. 5, 12 or 5,12")
    s.add_argument("--timeout", help="seconds or 'none'")
    s.add_argument("--min-pkts", type=int)
    s.add_argument("--filter", choices=("both", "on", "off"))
    s.add_argument("--models", help="comma list of rf, nn, svm")
    s.add_argument("--wavelet")
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--workers", type=int)
    s.add_argument("--labels")
    s.add_argument("--out")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

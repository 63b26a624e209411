"""Command-line harness: dataset generation, victim training, quantization,
the progressive attack, baselines, and report rendering.

Exit codes: 0 success, 1 runtime failure (bad files, infeasible configs),
2 usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import attack, baselines, checkpoint, data, nn, quantize, reporting, training


def _parse_layers(text):
    try:
        layers = tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"layers must be comma-separated ints, got {text!r}") from None
    if not layers:
        raise argparse.ArgumentTypeError("layers list is empty")
    return layers


def _add_attack_flags(sub):
    sub.add_argument("--seed", type=int, default=0, help="base RNG seed; trial i uses seed+i")
    sub.add_argument("--nb", type=int, default=1, help="bits committed per iteration")
    sub.add_argument("--sample-size", type=int, default=128, help="attack-sample size")
    sub.add_argument(
        "--stop-acc",
        type=float,
        default=None,
        help="stop once val top-1 <= this (default: random guess + 1 point)",
    )
    sub.add_argument("--max-iters", type=int, default=50, help="iteration cap")
    sub.add_argument("--trials", type=int, default=1, help="independent trials")
    sub.add_argument("--hamming-budget", type=int, default=None, help="stored-bit distance cap")
    sub.add_argument("--layers", type=_parse_layers, default=None, help="restrict to layer indices, e.g. 0,3")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bitfault",
        description="Bit-flip fault attacks on quantized neural networks.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("dataset", help="materialize the synthetic glyph dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("--format", choices=("idx", "csv"), default="idx")
    p.add_argument("--train", type=int, default=4000)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_dataset)

    p = subs.add_parser("train", help="train a float victim")
    p.add_argument("data", help="dataset directory")
    p.add_argument("out", help="output checkpoint path")
    p.add_argument("--format", choices=("idx", "csv"), default="idx")
    p.add_argument("--arch", choices=("cnn", "mlp"), default="cnn")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("quantize", help="post-training quantize a float checkpoint")
    p.add_argument("input", help="float checkpoint")
    p.add_argument("out", help="quantized checkpoint path")
    p.add_argument("--nq", type=int, default=8, help="bits per weight")
    p.set_defaults(func=_cmd_quantize)

    p = subs.add_parser("attack", help="run the progressive bit-flip attack")
    p.add_argument("model", help="quantized checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--format", choices=("idx", "csv"), default="idx")
    p.add_argument("--out", required=True, help="output directory")
    _add_attack_flags(p)
    p.set_defaults(func=_cmd_attack)

    p = subs.add_parser("baseline", help="run a reference attack")
    p.add_argument("model", help="checkpoint (quantized; float for --mode exponent)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--format", choices=("idx", "csv"), default="idx")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=("random", "exponent", "layer-restricted"), default="random")
    p.add_argument("--budget", type=int, default=100, help="flips (random) or iterations (layer-restricted)")
    p.add_argument("--target-bit", type=int, default=30, help="float32 bit for --mode exponent")
    _add_attack_flags(p)
    p.set_defaults(func=_cmd_baseline)

    p = subs.add_parser("report", help="summarize trace CSVs and render figures")
    p.add_argument("traces", nargs="+", help="trace CSV files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threshold", type=float, default=None, help="accuracy threshold for flip counts")
    p.set_defaults(func=_cmd_report)

    return parser


def _cmd_dataset(args):
    dataset = data.synthetic_glyphs(args.train, args.test, seed=args.seed)
    root = data.save_dataset(dataset, args.out, fmt=args.format)
    print(f"wrote {args.format} dataset ({args.train} train / {args.test} test) to {root}")
    return 0


def _cmd_train(args):
    dataset = data.load_dataset(args.data, fmt=args.format)
    build = training.desk_cnn if args.arch == "cnn" else training.small_mlp
    model = build(seed=args.seed, input_shape=dataset.sample_shape, classes=dataset.num_classes)
    config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    result = training.train_victim(model, dataset, config)
    checkpoint.save_checkpoint(result.model, args.out)
    print(f"trained {args.arch}: train top-1 {result.train_top1:.4f}, test top-1 {result.test_top1:.4f}")
    print(f"wrote checkpoint to {args.out}")
    return 0


def _cmd_quantize(args):
    model = checkpoint.load_checkpoint(args.input)
    quantized = quantize.quantize_model(model, args.nq)
    checkpoint.save_checkpoint(quantized, args.out)
    print(f"quantized to {args.nq}-bit codes: {args.out}")
    return 0


def _run_trials(victim, dataset, base_config, trials, out_dir, runner, kind, threshold):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces, csv_names = [], []
    for trial in range(trials):
        config = replace(base_config, seed=base_config.seed + trial)
        trace = runner(victim.clone(), config)
        name = f"trace_seed{config.seed}.csv"
        reporting.write_trace_csv(trace, out_dir / name)
        reporting.plot_trace(trace, out_dir / f"trace_seed{config.seed}.png", threshold)
        traces.append(trace)
        csv_names.append(name)
        print(
            f"trial seed={config.seed}: status={trace.status} "
            f"N_flip={trace.n_flips} D_B={trace.hamming} "
            f"top1 {trace.clean_top1:.4f} -> {trace.final_top1:.4f}"
        )
    summary = reporting.summarize_traces(traces, threshold, csv_names)
    reporting.write_summary_json(summary, kind, base_config, out_dir / "summary.json", threshold)
    reporting.plot_trials([reporting.trace_rows(t) for t in traces], out_dir / "trials.png", threshold)
    print(f"wrote {trials} trace(s), summary.json, and figures to {out_dir}")
    return 0


def _attack_config(args):
    return attack.AttackConfig(
        flips_per_iter=args.nb,
        sample_size=args.sample_size,
        max_iterations=args.max_iters,
        stop_accuracy=args.stop_acc,
        hamming_budget=args.hamming_budget,
        seed=args.seed,
        layers=args.layers,
    )


def _cmd_attack(args):
    victim = checkpoint.load_checkpoint(args.model)
    dataset = data.load_dataset(args.data, fmt=args.format)
    config = _attack_config(args)
    threshold = config.stop_accuracy if config.stop_accuracy is not None else attack._resolve_stop(victim, config)
    return _run_trials(
        victim,
        dataset,
        config,
        args.trials,
        args.out,
        lambda model, cfg: attack.run_attack(model, dataset, cfg),
        "progressive",
        threshold,
    )


def _cmd_baseline(args):
    # constructed for its argument validation; the runners below take the
    # pieces directly
    baselines.BaselineConfig(
        mode=args.mode,
        budget=args.budget,
        target_bit=args.target_bit,
        layers=args.layers,
        seed=args.seed,
        trials=args.trials,
    )
    victim = checkpoint.load_checkpoint(args.model)
    dataset = data.load_dataset(args.data, fmt=args.format)
    if args.mode == "random":
        runner = lambda model, cfg: baselines.random_quantized_flips(  # noqa: E731
            model, dataset, args.budget, cfg.seed
        )
        base = attack.AttackConfig(seed=args.seed)  # seed carrier for _run_trials
        return _run_trials(victim, dataset, base, args.trials, args.out, runner, "random-flip", args.stop_acc)
    if args.mode == "exponent":
        runner = lambda model, cfg: baselines.float_exponent_flip(  # noqa: E731
            model, dataset, cfg.seed, target_bit=args.target_bit
        )
        base = attack.AttackConfig(seed=args.seed)
        return _run_trials(victim, dataset, base, args.trials, args.out, runner, "exponent-flip", None)
    # layer-restricted: budget caps iterations; by default only the budget stops it
    config = _attack_config(args)
    config = replace(
        config,
        max_iterations=args.budget,
        stop_accuracy=args.stop_acc if args.stop_acc is not None else 0.0,
    )
    runner = lambda model, cfg: baselines.layer_restricted_attack(  # noqa: E731
        model, dataset, args.layers, cfg
    )
    return _run_trials(victim, dataset, config, args.trials, args.out, runner, "layer-restricted", args.stop_acc)


def _cmd_report(args):
    summary = reporting.summarize_csvs(args.traces, args.threshold)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_summary_json(summary, "report", None, out_dir / "summary.json", args.threshold)
    rows_list = [reporting.read_trace_csv(p) for p in args.traces]
    reporting.plot_trials(rows_list, out_dir / "trials.png", args.threshold)
    medians = summary["medians"]
    print(f"summarized {len(args.traces)} trace(s): median final top-1 {medians['final_top1']:.4f}")
    if args.threshold is not None:
        print(f"median flips to top-1 <= {args.threshold}: {medians['flips_to_threshold']}")
    print(f"wrote summary.json and trials.png to {out_dir}")
    return 0


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary: report and fail
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()

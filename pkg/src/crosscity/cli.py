"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import sys
from pathlib import Path

from . import evaluate, plots, synthgen
from .config import ExperimentConfig, load_config
from .data import (RegionGrid, CityDataset, NormStats, UrbanImageTimeSeries,
                   frames_from_csv, load_dataset, save_dataset)
from .errors import DataError, NumericalError
from .matching import RegionMatching, match_auxiliary, match_service
from .network import load_checkpoint, save_checkpoint
from .transfer import finetune, pretrain_source, regiontrans_train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _load_cfg(args):
    base = ExperimentConfig()
    if getattr(args, "config", None):
        return load_config(args.config, base=base)
    return base


def _stats_for(args, target):
    if getattr(args, "stats_from", None):
        return load_dataset(Path(args.stats_from)).stats
    return target.stats


# ---- subcommands --------------------------------------------------------

def cmd_gen(args):
    spec = synthgen.get_scenario(args.scenario)
    source, target, truth = synthgen.generate(spec)
    out = Path(args.out)
    save_dataset(source, out / "source")
    save_dataset(target, out / "target")
    synthgen.save_truth(truth["source"], out / "source" / "truth.txt")
    synthgen.save_truth(truth["target"], out / "target" / "truth.txt")
    synthgen.save_scenario(spec, out / "scenario.txt")
    print(f"wrote scenario '{spec.name}' to {out}")


def cmd_match(args):
    target = load_dataset(Path(args.target))
    source = load_dataset(Path(args.source))
    if args.mode == "service":
        matching = match_service(target, source)
    else:
        matching = match_auxiliary(target, source)
    matching.save(args.out)
    print(f"matched {len(matching.entries)} regions -> {args.out}")


def cmd_pretrain(args):
    source = load_dataset(Path(args.source))
    cfg = _load_cfg(args)
    params, report = pretrain_source(source, cfg)
    save_checkpoint(params, args.out)
    if args.report:
        report.save_csv(args.report)
    print(f"pretrained {report.epochs_run} epochs, final loss "
          f"{report.combined_losses[-1]:.6g} -> {args.out}")


def cmd_finetune(args):
    target = load_dataset(Path(args.target))
    cfg = _load_cfg(args)
    pretrained = load_checkpoint(args.ckpt)
    params, report = finetune(pretrained, target, cfg,
                              stats=_stats_for(args, target))
    save_checkpoint(params, args.out)
    if args.report:
        report.save_csv(args.report)
    print(f"fine-tuned {report.epochs_run} epochs, final loss "
          f"{report.combined_losses[-1]:.6g} -> {args.out}")


def cmd_transfer(args):
    target = load_dataset(Path(args.target))
    source = load_dataset(Path(args.source))
    cfg = _load_cfg(args)
    if args.w is not None:
        from dataclasses import replace
        cfg = replace(cfg, w=args.w)
    pretrained = load_checkpoint(args.ckpt)
    matching = RegionMatching.load(args.matching)
    params, report = regiontrans_train(pretrained, target, source, matching,
                                       cfg, stats=source.stats)
    save_checkpoint(params, args.out)
    if args.report:
        report.save_csv(args.report)
    print(f"transferred {report.epochs_run} epochs, final loss "
          f"{report.combined_losses[-1]:.6g} -> {args.out}")


def cmd_eval(args):
    dataset = load_dataset(Path(args.data))
    cfg = _load_cfg(args)
    params = load_checkpoint(args.ckpt)
    stats = _stats_for(args, dataset)
    if args.split == "test":
        n_test = max(1, dataset.t_count // 5)
        t0 = dataset.t_start + dataset.t_count - n_test
        per_ch = evaluate.evaluate_params(params, dataset, stats, cfg, t0)
    else:
        t0 = dataset.t_start + cfg.k
        per_ch = evaluate.evaluate_params(params, dataset, stats, cfg, t0)
    for ch, v in per_ch.items():
        print(f"rmse.{ch}: {v:.6g}")
    print(f"rmse.avg: {evaluate.avg_flow_rmse(per_ch):.6g}")


def cmd_experiment(args):
    spec = synthgen.get_scenario(args.scenario)
    cfg = _load_cfg(args)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(r):
        print(f"  {r.scenario} {r.method} seed={r.seed} "
              f"rmse={r.rmse_avg:.4f} ({r.runtime:.1f}s)")

    if args.sweep_w:
        ws = [float(v) for v in args.sweep_w.split(",") if v]
        results = evaluate.run_w_sweep(spec, ws, seeds, cfg,
                                       progress=progress)
    else:
        methods = [m for m in args.methods.split(",") if m]
        results = evaluate.run_experiment(spec, methods, seeds, cfg,
                                          progress=progress)
    evaluate.save_results(results, out / "results.csv")
    _emit_reports(results, out)
    print(f"wrote {len(results)} result rows to {out}")


def _emit_reports(results, out):
    written = evaluate.emit_plot_data(results, out)
    table_rows = [r for r in results if not r.method.startswith("w=")]
    sweep_rows = [r for r in results if r.method.startswith("w=")]
    if table_rows:
        plots.render_method_comparison(table_rows, out / "table_methods.png")
    if sweep_rows:
        plots.render_w_sweep(sweep_rows, out / "w_sweep.png")
    return written


def cmd_plot_data(args):
    results = evaluate.load_results(Path(args.results) / "results.csv")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _emit_reports(results, out)
    print(f"wrote plot data for {len(results)} rows to {out}")


def cmd_ingest(args):
    grid = RegionGrid(args.width, args.height)
    service = {}
    t_starts = set()
    for ch, path in (("inflow", args.inflow), ("outflow", args.outflow)):
        with open(path) as f:
            t0, frames = frames_from_csv(f, grid)
        service[ch] = UrbanImageTimeSeries(grid, t0, frames, ch)
        t_starts.add((t0, frames.shape[0]))
    if len(t_starts) > 1:
        raise DataError("inflow and outflow CSVs cover different timestamps")
    dataset = CityDataset(args.city, service,
                          stats=NormStats.from_series(service))
    save_dataset(dataset, Path(args.out))
    print(f"ingested {dataset.t_count} frames -> {args.out}")


# ---- argument wiring ----------------------------------------------------

def build_parser():
    p = _Parser(prog="crosscity",
                description="Cross-city transfer learning for grid-based "
                            "crowd flow prediction.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scenario")
    g.add_argument("--scenario", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("match", help="compute the region matching")
    m.add_argument("--target", required=True)
    m.add_argument("--source", required=True)
    m.add_argument("--mode", choices=["service", "aux"], default="service")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_match)

    pt = sub.add_parser("pretrain", help="train on the source city")
    pt.add_argument("--source", required=True)
    pt.add_argument("--config")
    pt.add_argument("--out", required=True)
    pt.add_argument("--report")
    pt.set_defaults(func=cmd_pretrain)

    ft = sub.add_parser("finetune", help="fine-tune on the target city")
    ft.add_argument("--ckpt", required=True)
    ft.add_argument("--target", required=True)
    ft.add_argument("--config")
    ft.add_argument("--stats-from")
    ft.add_argument("--out", required=True)
    ft.add_argument("--report")
    ft.set_defaults(func=cmd_finetune)

    tr = sub.add_parser("transfer", help="region-paired transfer training")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--target", required=True)
    tr.add_argument("--source", required=True)
    tr.add_argument("--matching", required=True)
    tr.add_argument("--w", type=float)
    tr.add_argument("--config")
    tr.add_argument("--out", required=True)
    tr.add_argument("--report")
    tr.set_defaults(func=cmd_transfer)

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", choices=["train", "test"], default="test")
    ev.add_argument("--config")
    ev.add_argument("--stats-from")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("experiment", help="full scenario x method x seed run")
    ex.add_argument("--scenario", required=True)
    ex.add_argument("--methods", default=",".join(evaluate.METHODS))
    ex.add_argument("--seeds", default="1,2,3,4,5")
    ex.add_argument("--sweep-w",
                    help="comma list of w values; replaces --methods")
    ex.add_argument("--config")
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_experiment)

    pd = sub.add_parser("plot-data", help="aggregate results into CSVs/PNGs")
    pd.add_argument("--results", required=True)
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_plot_data)

    ing = sub.add_parser("ingest", help="build a dataset dir from CSVs")
    ing.add_argument("--city", required=True)
    ing.add_argument("--width", type=int, required=True)
    ing.add_argument("--height", type=int, required=True)
    ing.add_argument("--inflow", required=True)
    ing.add_argument("--outflow", required=True)
    ing.add_argument("--out", required=True)
    ing.set_defaults(func=cmd_ingest)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

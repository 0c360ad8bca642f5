"""Command-line driver for the behavior-prediction pipeline.

Every subcommand reads and writes artifacts under ``--out-dir`` so the stages
can run one by one (synth, ingest, topics fit/infer, metrics, layout, split,
train, eval, report) or all together with ``run-all``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ConfigError, DataError, NumericalError, TopicGridError
from ..layout import GridAssignment, TopicEmbedding2D, apply_assignment
from ..loglab import (
    BucketStats, GroundTruth, bucket_entries, bundles_from_json, bundles_to_json,
    generate_synthetic_logs, read_log_file, write_log,
)
from ..metrics import RelevanceTable, build_metric_series, dump_metrics, load_metrics, metric_tensor
from ..models import load_model, predict_batched
from ..tensorio import dump_tensor, load_tensor
from ..topics import LdaModel
from . import plots
from .config import PipelineConfig
from .experiment import (
    SPLITS, ArchResult, ExperimentReport, PipelineState, compute_layout, describe_data, evaluate,
    fit_topics, infer_topics, make_splits, prepare_data, run_experiment, splits_from_json,
    train_architecture,
)

log = logging.getLogger("topicgrid")


class UsageError(TopicGridError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# artifact helpers


def _write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise DataError(f"missing {path}; run the stage that produces it first")
    return json.loads(path.read_text())


def _update_summary(out: Path, **values: Any) -> None:
    path = out / "pipeline.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data.update(values)
    _write_json(path, data)


def _load_frames(out: Path) -> tuple[list[str], np.ndarray]:
    frames, manifest = load_tensor(out / "frames")
    return manifest["entities"], frames


def _load_splits(out: Path):
    entities, frames = _load_frames(out)
    return splits_from_json(_read_json(out / "splits.json"), entities, frames)


def save_embedding(path: Path, emb: TopicEmbedding2D) -> None:
    _write_json(path, {"points": emb.points.tolist(), "eigenvalues": emb.eigenvalues.tolist(),
                       "total_variance": emb.total_variance})


def save_relevance(directory: Path, table: RelevanceTable) -> None:
    dump_tensor(directory, table.theta, documents=table.documents, layout="[document][topic]")


def load_relevance(directory: Path) -> RelevanceTable:
    theta, manifest = load_tensor(directory)
    return RelevanceTable(manifest["documents"], theta)


def save_history(out: Path, res: ArchResult) -> None:
    _write_json(out / f"history_{res.arch}.json", {
        "arch": res.arch, "n_params": res.n_params, "best_epoch": res.best_epoch,
        "history": res.history, "epoch_seconds": res.epoch_seconds,
    })
    plots.write_curve_csv(out / f"curves_{res.arch}.csv", res.history)
    res.model.save(out / "models" / res.arch)


def load_history(out: Path, arch: str) -> ArchResult:
    d = _read_json(out / f"history_{arch}.json")
    return ArchResult(arch, d["n_params"], d["history"], d["epoch_seconds"], d["best_epoch"], model=None)


def write_report(out: Path, report: ExperimentReport, st_frames=None, make_plots: bool = True,
                 heatmap_entities: int = 4) -> None:
    """report.json (deterministic), timing.json (wall clock), curve CSVs and figures."""
    _write_json(out / "report.json", report.to_json())
    _write_json(out / "timing.json", report.timing())
    for arch, res in report.results.items():
        plots.write_curve_csv(out / f"curves_{arch}.csv", res.history)
    if not make_plots:
        return
    figs = out / "figures"
    figs.mkdir(parents=True, exist_ok=True)
    for arch, res in report.results.items():
        plots.plot_model_curves(figs / f"curves_{arch}.svg", arch, res.history)
    plots.plot_rle_panels(figs / "rle_curves.svg", {a: r.history for a, r in report.results.items()})
    if st_frames is not None and heatmap_entities > 0:
        splits, models, assignment, embedding = st_frames
        test = splits.test
        n = min(heatmap_entities, len(test))
        preds = {a: predict_batched(m, test.X[:n]) for a, m in models.items()}
        rows = []
        for i in range(n):
            panels = [(f"p{test.input_periods[0] + t}", test.X[i, t]) for t in range(test.X.shape[1])]
            panels.append((f"target p{test.target_period}", test.Y[i]))
            panels += [(a.upper(), preds[a][i]) for a in models]
            rows.append((test.entities[i], panels))
        plots.plot_frame_heatmaps(figs / "test_frames.png", rows)
        if embedding is not None:
            plots.plot_layout(figs / "layout.svg", embedding, assignment.cells, assignment.k)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: PipelineConfig, out: Path, args) -> int:
    entries, truth = generate_synthetic_logs(cfg.synth)
    with open(out / "logs.tsv", "w", encoding="utf-8", newline="\n") as fh:
        write_log(entries, fh)
    truth.save(out / "ground_truth.json")
    _update_summary(out, log_entries=len(entries))
    print(f"wrote {len(entries)} log lines to {out / 'logs.tsv'}")
    return 0


def cmd_ingest(cfg: PipelineConfig, out: Path, args) -> int:
    path = Path(args.logs) if args.logs else out / "logs.tsv"
    entries, pstats = read_log_file(path)
    bstats = BucketStats()
    bundles = bucket_entries(entries, cfg.period_spec(), bstats)
    _write_json(out / "bundles.json", bundles_to_json(bundles))
    stats = {"accepted": pstats.accepted, "rejected": dict(pstats.rejected), "dropped_out_of_range": bstats.dropped,
             "bundles": len(bundles)}
    _write_json(out / "ingest_stats.json", stats)
    _update_summary(out, log_entries=pstats.accepted, dropped_out_of_range=bstats.dropped, bundles=len(bundles))
    print(json.dumps(stats))
    return 0


def cmd_topics(cfg: PipelineConfig, out: Path, args) -> int:
    bundles = bundles_from_json(_read_json(out / "bundles.json"))
    if args.action == "fit":
        model = fit_topics(bundles, cfg)
        model.save(out / "lda")
        _update_summary(out, vocabulary_size=model.V)
        print(f"fitted K={model.K} topics over V={model.V} words")
    else:
        model = LdaModel.load(out / "lda")
        table = infer_topics(model, bundles, cfg)
        save_relevance(out / "relevance", table)
        _update_summary(out, unique_documents=len(table.documents))
        print(f"inferred relevance for {len(table.documents)} documents")
    return 0


def cmd_metrics(cfg: PipelineConfig, out: Path, args) -> int:
    bundles = bundles_from_json(_read_json(out / "bundles.json"))
    table = load_relevance(out / "relevance")
    series = build_metric_series(bundles, table, cfg.topics.K, cfg.period_spec())
    entities, tensor = metric_tensor(series)
    dump_metrics(out / "metrics", entities, tensor)
    _update_summary(out, entities=len(entities), metric_mean=float(tensor.mean()),
                    metric_nonzero_fraction=float((tensor > 0).mean()))
    print(f"metrics tensor {tensor.shape} [entity][period][topic]")
    return 0


def cmd_layout(cfg: PipelineConfig, out: Path, args) -> int:
    model = LdaModel.load(out / "lda")
    emb, assignment = compute_layout(model)
    assignment.save(out / "assignment.json")
    save_embedding(out / "embedding.json", emb)
    entities, tensor, _ = load_metrics(out / "metrics")
    frames = apply_assignment(tensor, assignment)
    dump_metrics(out / "frames", entities, frames, layout="[entity][period][row][col]")
    _update_summary(out, pca_eigenvalues=emb.eigenvalues.tolist())
    print(f"mapped {model.K} topics onto a {assignment.k}x{assignment.k} grid")
    return 0


def cmd_split(cfg: PipelineConfig, out: Path, args) -> int:
    entities, frames = _load_frames(out)
    splits = make_splits(entities, frames, cfg.split, cfg.model.T, cfg.stage_seed("split"))
    _write_json(out / "splits.json", splits.to_json())
    sizes = {s: len(splits[s]) for s in SPLITS}
    _update_summary(out, split_sizes=sizes, test_target_period=splits.test.target_period,
                    train_target_period=splits.train.target_period)
    print(json.dumps(sizes))
    return 0


def _archs(cfg: PipelineConfig, args) -> tuple[str, ...]:
    return tuple(args.arch) if getattr(args, "arch", None) else cfg.train.archs


def _progress(arch: str, row: dict) -> None:
    log.info("%s epoch %d train=%.5f val=%.5f test=%.5f", arch, row["epoch"], row["train_rle"],
             row["val_rle"], row["test_rle"])


def cmd_train(cfg: PipelineConfig, out: Path, args) -> int:
    splits = _load_splits(out)
    with threadpool_limits(limits=1):
        for arch in _archs(cfg, args):
            res = train_architecture(arch, cfg, splits, on_epoch=_progress)
            save_history(out, res)
            best = res.best
            print(f"{arch}: best epoch {res.best_epoch} val_rle={best['val_rle']:.6f} test_rle={best['test_rle']:.6f}")
    return 0


def cmd_eval(cfg: PipelineConfig, out: Path, args) -> int:
    splits = _load_splits(out)
    results = {}
    for arch in _archs(cfg, args):
        model, _ = load_model(out / "models" / arch)
        results[arch] = {
            split: {loss: evaluate(model, splits[split].X, splits[split].Y, loss) for loss in ("rle", "mse")}
            for split in ((args.split,) if args.split else SPLITS)
        }
    _write_json(out / "eval.json", results)
    print(json.dumps(results, indent=2, sort_keys=True))
    return 0


def cmd_report(cfg: PipelineConfig, out: Path, args) -> int:
    results = {}
    for arch in cfg.train.archs:
        if (out / f"history_{arch}.json").exists():
            results[arch] = load_history(out, arch)
    if not results:
        raise DataError(f"no training histories in {out}; run `train` first")
    data = _read_json(out / "pipeline.json") if (out / "pipeline.json").exists() else {}
    report = ExperimentReport(cfg.to_dict(), data, results)
    extras = None
    if cfg.report.plots and (out / "splits.json").exists():
        models = {a: load_model(out / "models" / a)[0] for a in results if (out / "models" / a).exists()}
        emb = np.array(_read_json(out / "embedding.json")["points"]) if (out / "embedding.json").exists() else None
        extras = (_load_splits(out), models, GridAssignment.load(out / "assignment.json"), emb)
    write_report(out, report, extras, cfg.report.plots, cfg.report.heatmap_entities)
    _print_summary(report)
    return 0


def _print_summary(report: ExperimentReport) -> None:
    gains = report.gains()
    timing = report.timing()
    print("arch,best_epoch,test_rle,gain_vs_mlp_test,median_epoch_s")
    for arch, res in report.results.items():
        g = gains.get(arch, {}).get("test", float("nan"))
        print(f"{arch},{res.best_epoch},{res.best['test_rle']:.6f},{g:.4f},{timing[arch]['median_epoch_seconds']:.3f}")
    if "sccn_over_lrcn" in timing:
        print(f"sccn/lrcn epoch time ratio: {timing['sccn_over_lrcn']:.3f}")


def cmd_run_all(cfg: PipelineConfig, out: Path, args) -> int:
    st = prepare_data(cfg)
    with open(out / "logs.tsv", "w", encoding="utf-8", newline="\n") as fh:
        write_log(st.entries, fh)
    st.truth.save(out / "ground_truth.json")
    _write_json(out / "bundles.json", bundles_to_json(st.bundles))
    st.lda.save(out / "lda")
    save_relevance(out / "relevance", st.relevance)
    dump_metrics(out / "metrics", st.entities, st.metrics)
    st.assignment.save(out / "assignment.json")
    save_embedding(out / "embedding.json", st.embedding)
    dump_metrics(out / "frames", st.entities, st.frames, layout="[entity][period][row][col]")
    _write_json(out / "splits.json", st.splits.to_json())
    _write_json(out / "pipeline.json", st.data)

    run_experiment(cfg, on_epoch=_progress, state=st)
    for res in st.report.results.values():
        save_history(out, res)
    models = {a: r.model for a, r in st.report.results.items()}
    write_report(out, st.report, (st.splits, models, st.assignment, st.embedding.points),
                 cfg.report.plots, cfg.report.heatmap_entities)
    _print_summary(st.report)
    return 0


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "topics": cmd_topics, "metrics": cmd_metrics,
    "layout": cmd_layout, "split": cmd_split, "train": cmd_train, "eval": cmd_eval,
    "report": cmd_report, "run-all": cmd_run_all,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON pipeline config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the global seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="artifact directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = _Parser(prog="topicgrid", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="generate synthetic logs + ground truth")
    p = sub.add_parser("ingest", parents=[common], help="parse and bucket a TSV log")
    p.add_argument("--logs", help="log file (default: <out-dir>/logs.tsv)")
    p = sub.add_parser("topics", parents=[common], help="fit LDA or infer document relevance")
    p.add_argument("action", choices=("fit", "infer"))
    sub.add_parser("metrics", parents=[common], help="topical volume tensor")
    sub.add_parser("layout", parents=[common], help="PCA + split-diffuse grid, metric frames")
    sub.add_parser("split", parents=[common], help="entity-wise train/val/test split")
    for name, help_ in (("train", "train architectures"), ("eval", "evaluate trained checkpoints")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--arch", action="append", choices=("mlp", "tdrn", "lrcn", "sccn"))
        if name == "eval":
            p.add_argument("--split", choices=SPLITS)
    sub.add_parser("report", parents=[common], help="report.json, curves and figures from trained runs")
    sub.add_parser("run-all", parents=[common], help="the whole pipeline end to end")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    out = Path(getattr(args, "out_dir", "out"))
    try:
        cfg = PipelineConfig.load(getattr(args, "config", None), getattr(args, "seed", None))
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", cfg.to_dict())
        return COMMANDS[args.command](cfg, out, args)
    except TopicGridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (json.JSONDecodeError, OSError, KeyError) as exc:
        print(f"error: {exc!r}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

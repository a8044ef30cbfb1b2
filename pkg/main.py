"""
FedNewsRec simulator command line

    python main.py gen-synth --seed 7 --out data/
    python main.py train --mode federated --rounds 300 --seed 1
    python main.py evaluate --model model.ckpt
    python main.py privacy-report
    python main.py sweep --lambdas 0,0.015,0.05 --seeds 1,2,3,4,5
"""

import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional, Tuple

from config.config import FEDNEWSREC_DATA_DIR, default_eval_every, default_workers, get_config_summary, validate_config
from src.core.errors import ConfigError, FailureHandler
from src.core.models import HyperParams, MetricsReport, RoundReport, RunConfig, SyntheticConfig
from src.data.catalog import load_behaviors, load_catalog, write_behaviors, write_catalog
from src.data.config_file import HYPERPARAM_KEYS, SYNTHETIC_KEYS, build_settings, load_config_file
from src.data.synthetic import generate_synthetic
from src.eval.metrics import evaluate
from src.federated.runner import mean_and_stderr, run_experiment, with_vocabulary
from src.model.checkpoint import checkpoint_hyperparams, checkpoint_seed, load_checkpoint, save_checkpoint
from src.nn.rng import root
from src.privacy.ldp import privacy_report
from src.utils.logger import setup_logger

logger = setup_logger("fednewsrec.cli")
failure_handler = FailureHandler()

NEWS_FILE = "news.tsv"
TRAIN_FILE = "train.tsv"
TEST_FILE = "test.tsv"


def _write_lines(path: str, lines: List[str]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for line in lines:
            handle.write(line + "\n")


def _data_paths(run: RunConfig) -> Dict[str, str]:
    return {
        "news": run.news_file or os.path.join(run.data_dir, NEWS_FILE),
        "train": run.train_file or os.path.join(run.data_dir, TRAIN_FILE),
        "test": run.test_file or os.path.join(run.data_dir, TEST_FILE),
    }


# flags whose dest is already the config key
_PASSTHROUGH_KEYS = (
    "mode", "rounds", "seed", "epochs", "workers", "eval_every", "noise_scale", "clip_scale",
    "train_user_fraction", "max_train_users", "max_samples_per_round", "embedding_file",
    "data_dir", "news_file", "train_file", "test_file", "test_negatives",
    "metrics_out", "rounds_out", "model_out", "report_out", "report_format", "sweep_out",
    "lambdas", "deltas", "seeds",
)


def _overrides(args) -> Dict[str, Any]:
    """Flag values keyed by config name; unset flags are None and leave the file value alone."""
    values = {key: getattr(args, key, None) for key in _PASSTHROUGH_KEYS}
    values.update({
        "learning_rate": getattr(args, "lr", None),
        "client_fraction": getattr(args, "fraction", None),
        "batch_size": getattr(args, "batch", None),
    })
    if getattr(args, "disable_short_term", False):
        values["use_short_term"] = False
    if getattr(args, "disable_long_term", False):
        values["use_long_term"] = False
    if getattr(args, "noise_sparse_only", False):
        values["noise_sparse_only"] = True
    if getattr(args, "track_post_loss", False):
        values["track_post_loss"] = True
    return values


def _file_values(args) -> Dict[str, Any]:
    # environment defaults < config file
    values: Dict[str, Any] = {
        "workers": default_workers(),
        "eval_every": default_eval_every(),
        "data_dir": FEDNEWSREC_DATA_DIR,
    }
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    return values


def _settings(args, file_values: Optional[Dict[str, Any]] = None) -> Tuple[HyperParams, RunConfig]:
    if file_values is None:
        file_values = _file_values(args)
    return build_settings(file_values, _overrides(args))


def _load_test(paths: Dict[str, str], catalog, hp: HyperParams, run: RunConfig, seed: int):
    return load_behaviors(
        paths["test"], catalog, hp.history_len,
        test_negatives=run.test_negatives, rng=root(seed).split("test_negatives"),
    )


# --------------------------------------------------------------------------- commands

def cmd_gen_synth(args) -> int:
    synth_values = {
        "num_users": args.users,
        "num_news": args.news_count,
        "num_topics": args.topics,
        "words_per_topic": args.words_per_topic,
        "click_noise": args.click_noise,
        "title_len": args.title_len,
        "topics_per_user": args.topics_per_user,
        "impressions_per_user": args.impressions_per_user,
        "candidates_per_impression": args.candidates,
        "seed_clicks": args.seed_clicks,
        "test_fraction": args.test_fraction,
        "seed": args.seed,
    }
    values: Dict[str, Any] = load_config_file(args.config, SYNTHETIC_KEYS) if args.config else {}
    file_out = values.pop("out_dir", None)
    values.pop("workers", None)
    out_dir = args.out or file_out or FEDNEWSREC_DATA_DIR
    values.update({k: v for k, v in synth_values.items() if v is not None})
    if "seed" not in values:
        raise ConfigError("gen-synth needs --seed or a seed key in its config file")
    try:
        synth = SyntheticConfig(**values)
    except ValueError as e:
        raise ConfigError(f"invalid synthetic dataset settings: {e}") from e

    targets = [os.path.join(out_dir, name) for name in (NEWS_FILE, TRAIN_FILE, TEST_FILE)]
    existing = [path for path in targets if os.path.exists(path)]
    if existing and not args.force:
        raise ConfigError(f"refusing to overwrite {', '.join(existing)} (pass --force)")

    dataset = generate_synthetic(synth)
    os.makedirs(out_dir, exist_ok=True)
    write_catalog(dataset.catalog, targets[0])
    write_behaviors(dataset.train, targets[1])
    write_behaviors(dataset.test, targets[2])
    print(f"wrote {len(dataset.catalog)} news, {len(dataset.train)} train and "
          f"{len(dataset.test)} test impressions to {out_dir}")
    return 0


def cmd_train(args) -> int:
    hp, run = _settings(args)
    paths = _data_paths(run)
    catalog = load_catalog(paths["news"], hp.title_len)
    train = load_behaviors(paths["train"], catalog, hp.history_len)
    test = _load_test(paths, catalog, hp, run, run.seed)

    result = run_experiment(hp, run, catalog, train, test)

    _write_lines(run.metrics_out, [MetricsReport.CSV_HEADER] + [row.to_csv_row() for row in result.evaluations])
    if run.rounds_out:
        _write_lines(run.rounds_out, [RoundReport.CSV_HEADER] + [r.to_csv_row() for r in result.rounds])
    save_checkpoint(result.params, run.model_out, seed=run.seed)

    final = result.final.report
    print(f"AUC {final.auc:.4f}  MRR {final.mrr:.4f}  nDCG@5 {final.ndcg5:.4f}  nDCG@10 {final.ndcg10:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    file_values = _file_values(args)
    configured_hp, run = _settings(args, file_values)
    model_path = args.model or run.model_out
    if _has_model_settings(args, file_values):
        hp = configured_hp
    else:
        hp = checkpoint_hyperparams(model_path).model_copy(update={"vocab_size": None})

    # test negatives follow the training seed unless a seed is configured here
    seed = run.seed
    if args.seed is None and "seed" not in file_values:
        stored = checkpoint_seed(model_path)
        if stored is not None:
            seed = stored

    paths = _data_paths(run)
    catalog = load_catalog(paths["news"], hp.title_len)
    hp = with_vocabulary(hp, catalog)
    params = load_checkpoint(model_path, hp)
    test = _load_test(paths, catalog, hp, run, seed)

    report = evaluate(params, test, catalog, hp)
    if run.report_format == "json":
        print(json.dumps(report.model_dump(), sort_keys=True))
    elif run.report_format == "csv":
        print(MetricsReport.CSV_HEADER)
        print(report.to_csv_row(0, None))
    else:
        print(f"AUC {report.auc:.4f}")
        print(f"MRR {report.mrr:.4f}")
        print(f"nDCG@5 {report.ndcg5:.4f}")
        print(f"nDCG@10 {report.ndcg10:.4f}")
        print(f"skipped {report.skipped}")
    if run.report_out:
        _write_lines(run.report_out, [MetricsReport.CSV_HEADER, report.to_csv_row(0, None)])
    return 0


def _has_model_settings(args, file_values: Dict[str, Any]) -> bool:
    """True when the config file or a flag describes the model, so the checkpoint header is not used."""
    if getattr(args, "disable_short_term", False) or getattr(args, "disable_long_term", False):
        return True
    return any(key in HYPERPARAM_KEYS for key in file_values)


def cmd_privacy_report(args) -> int:
    hp, run = _settings(args)
    report = privacy_report(hp.privacy(run.noise_sparse_only))
    print(f"clip_scale (delta): {report['clip_scale']}")
    print(f"noise_scale (lambda): {report['noise_scale']}")
    if report["epsilon"] is None:
        print("epsilon: budget undefined (no noise)")
    else:
        print(f"epsilon: {report['epsilon']:.4f}")
    print(f"noise_std: {report['noise_std']:.6g}")
    print(f"noise_variance: {report['noise_variance']:.6g}")
    return 0


SWEEP_HEADER = (
    "delta,lambda,epsilon,seeds,auc_mean,auc_stderr,mrr_mean,mrr_stderr,"
    "ndcg5_mean,ndcg5_stderr,ndcg10_mean,ndcg10_stderr"
)


def cmd_sweep(args) -> int:
    hp, run = _settings(args)
    paths = _data_paths(run)
    catalog = load_catalog(paths["news"], hp.title_len)
    train = load_behaviors(paths["train"], catalog, hp.history_len)
    test = _load_test(paths, catalog, hp, run, run.seed)

    lambdas = run.lambdas or [hp.noise_scale]
    deltas = run.deltas or [hp.clip_scale]
    seeds = run.seeds or [run.seed]

    lines = [SWEEP_HEADER]
    for delta in deltas:
        for lam in lambdas:
            setting = hp.model_copy(update={"clip_scale": delta, "noise_scale": lam})
            finals = []
            for seed in seeds:
                result = run_experiment(setting, run, catalog, train, test, seed=seed)
                finals.append(result.final.report)
            epsilon = setting.privacy().budget() if lam > 0 else None
            row = [repr(float(delta)), repr(float(lam)), "" if epsilon is None else repr(epsilon), str(len(seeds))]
            for name in ("auc", "mrr", "ndcg5", "ndcg10"):
                mean, stderr = mean_and_stderr([getattr(r, name) for r in finals])
                row += [repr(mean), repr(stderr)]
            lines.append(",".join(row))
            logger.info(
                "Sweep setting completed",
                extra={"event_type": "sweep.setting_completed", "clip_scale": delta, "noise_scale": lam}
            )

    _write_lines(run.sweep_out, lines)
    print(f"wrote {len(lines) - 1} settings to {run.sweep_out}")
    return 0


# --------------------------------------------------------------------------- parser

def _add_data_flags(parser: argparse.ArgumentParser, train: bool = True) -> None:
    parser.add_argument("--data", dest="data_dir", help="Directory holding news/train/test TSVs (default $FEDNEWSREC_DATA_DIR)")
    parser.add_argument("--news", dest="news_file", help="Catalog TSV (overrides --data)")
    if train:
        parser.add_argument("--train", dest="train_file", help="Training behavior TSV (overrides --data)")
    parser.add_argument("--test", dest="test_file", help="Test behavior TSV (overrides --data)")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value run configuration file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--disable-short-term", action="store_true", help="User vector from long-term interest only")
    parser.add_argument("--disable-long-term", action="store_true", help="User vector from short-term interest only")


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    _add_model_flags(parser)
    parser.add_argument("--mode", choices=["federated", "central"])
    parser.add_argument("--rounds", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch", type=int, help="Centralized mini-batch size")
    parser.add_argument("--lr", type=float, help="Learning rate η")
    parser.add_argument("--lambda", dest="noise_scale", type=float, help="Laplace noise scale λ")
    parser.add_argument("--delta", dest="clip_scale", type=float, help="Clip scale δ (inf disables clipping)")
    parser.add_argument("--fraction", type=float, help="Client fraction r per round")
    parser.add_argument("--workers", type=int, help="Intra-round client parallelism")
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--train-user-fraction", type=float)
    parser.add_argument("--max-train-users", type=int)
    parser.add_argument("--max-samples-per-round", type=int)
    parser.add_argument("--noise-sparse-only", action="store_true", help="Noise touched embedding rows only")
    parser.add_argument("--track-post-loss", action="store_true")
    parser.add_argument("--embedding-file", help="Pre-trained `word v1 v2 ...` embeddings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fednewsrec", description="Federated news recommendation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-synth", help="Write a synthetic catalog and train/test behavior logs")
    gen.add_argument("--config", help="key = value generator settings (SyntheticConfig keys, out_dir)")
    gen.add_argument("--seed", type=int, help="Generator seed; required here or in the config file")
    gen.add_argument("--out", help="Output directory (default $FEDNEWSREC_DATA_DIR)")
    gen.add_argument("--users", type=int)
    gen.add_argument("--news", dest="news_count", type=int)
    gen.add_argument("--topics", type=int)
    gen.add_argument("--words-per-topic", type=int)
    gen.add_argument("--click-noise", type=float)
    gen.add_argument("--title-len", type=int)
    gen.add_argument("--topics-per-user", type=int)
    gen.add_argument("--impressions-per-user", type=int)
    gen.add_argument("--candidates", type=int)
    gen.add_argument("--seed-clicks", type=int)
    gen.add_argument("--test-fraction", type=float)
    gen.add_argument("--workers", type=int, help="Accepted for symmetry; generation is single-threaded")
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(handler=cmd_gen_synth)

    train = sub.add_parser("train", help="Train FedNewsRec or the centralized baseline")
    _add_training_flags(train)
    _add_data_flags(train)
    train.add_argument("--test-negatives", type=int, help="Pad click-only test impressions with this many sampled news")
    train.add_argument("--metrics-out", help="Evaluation CSV (default metrics.csv)")
    train.add_argument("--rounds-out", help="Per-round CSV")
    train.add_argument("--model-out", help="Checkpoint path (default model.ckpt)")
    train.set_defaults(handler=cmd_train)

    ev = sub.add_parser("evaluate", help="Score a checkpoint on held-out impressions")
    ev.add_argument("--model", help="Checkpoint to score (default: the model_out setting)")
    _add_model_flags(ev)
    _add_data_flags(ev, train=False)
    ev.add_argument("--test-negatives", type=int, help="Pad click-only test impressions with this many sampled news")
    ev.add_argument("--format", dest="report_format", choices=["text", "csv", "json"])
    ev.add_argument("--out", dest="report_out", help="Also write the report as CSV")
    ev.set_defaults(handler=cmd_evaluate)

    privacy = sub.add_parser("privacy-report", help="Per-upload privacy budget of the configured mechanism")
    privacy.add_argument("--config")
    privacy.add_argument("--lambda", dest="noise_scale", type=float)
    privacy.add_argument("--delta", dest="clip_scale", type=float)
    privacy.set_defaults(handler=cmd_privacy_report)

    sweep = sub.add_parser("sweep", help="Final metrics over a grid of λ and δ, averaged over seeds")
    _add_training_flags(sweep)
    _add_data_flags(sweep)
    sweep.add_argument("--lambdas", help="Comma-separated noise scales")
    sweep.add_argument("--deltas", help="Comma-separated clip scales")
    sweep.add_argument("--seeds", help="Comma-separated seeds")
    sweep.add_argument("--out", dest="sweep_out", help="Sweep CSV (default sweep.csv)")
    sweep.set_defaults(handler=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        validate_config()
        logger.info("FedNewsRec startup", extra={"config_summary": get_config_summary(), "command": args.command})
        return args.handler(args)
    except Exception as e:
        failure_handler.handle(args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return failure_handler.exit_code(e)


if __name__ == "__main__":
    sys.exit(main())

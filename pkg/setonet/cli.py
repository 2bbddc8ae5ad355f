"""
命令行入口
子命令: gen / train / eval / ablate-sensors / verify-uat / plot
"""

import argparse
import json
import logging
import os
import subprocess
import sys
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .benchmarks import generate_dataset, get_card, list_benchmarks
from .config import build_train_config, describe_config, parse_overrides
from .database import Database, get_default_db_path
from .errors import EXIT_INTERNAL, EXIT_OK, SetONetError, NumericalFailure, exit_code_for
from .exporter import SummaryExporter, aggregate_ablation
from .metrics_manager import MetricsManager
from .models import PROTOCOLS, VARIANTS, ExperimentManifest, MetricsRecord
from .plotting import plot_ablation, plot_loss_history
from .run_manager import RunManager
from .sensors import sensor_count_ablation
from .training import evaluate, load_checkpoint, load_datasets, train
from .uat import assemble_and_verify, format_report, perturb_for_distinct_codes, random_reference_branch

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parent.parent

# 命令行标志到配置字段的映射
FLAG_FIELDS = {
    "steps": "total_steps",
    "batch": "batch_size",
    "lr": "lr",
    "clip": "clip_norm",
    "eval_every": "eval_every",
    "drop_rate": "drop_rate",
    "dtype": "dtype",
    "device": "device",
    "data": "data_dir",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setonet", description="SetONet 算子学习实验工具")
    parser.add_argument("--verbose", action="store_true", help="输出调试日志")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="生成基准数据集")
    gen.add_argument("--benchmark", required=True, choices=list_benchmarks())
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--train-size", type=int, default=None)
    gen.add_argument("--test-size", type=int, default=None)
    gen.add_argument("--set", action="append", default=[], metavar="FIELD=VALUE", help="覆盖卡片字段")
    gen.add_argument("--jobs", type=int, default=1)
    gen.add_argument("--force", action="store_true")

    tr = sub.add_parser("train", help="训练模型")
    _add_run_arguments(tr)
    tr.add_argument("--seeds", type=int, nargs="+", default=None)
    tr.add_argument("--jobs", type=int, default=1, help="并行的种子子进程数")
    tr.add_argument("--force", action="store_true", help="覆盖同名运行记录")
    tr.add_argument("--skip-summary", action="store_true", help=argparse.SUPPRESS)

    ev = sub.add_parser("eval", help="评估检查点")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--protocol", choices=PROTOCOLS, default="fixed")
    ev.add_argument("--data", default=None)
    ev.add_argument("--drop-rate", type=float, default=None)
    ev.add_argument("--eval-seed", type=int, default=None)

    ab = sub.add_parser("ablate-sensors", help="传感器数量消融")
    ab.add_argument("--checkpoints", nargs="+", required=True)
    ab.add_argument("--counts", type=int, nargs="+", required=True)
    ab.add_argument("--data", default=None)
    ab.add_argument("--out", required=True)

    uat = sub.add_parser("verify-uat", help="万能逼近构造校验")
    uat.add_argument("--m", type=int, default=3)
    uat.add_argument("--n", type=int, default=2)
    uat.add_argument("--p", type=int, default=2)
    uat.add_argument("--d-out", type=int, default=2)
    uat.add_argument("--n-test", type=int, default=100)
    uat.add_argument("--magnitude", type=float, default=1e-3)
    uat.add_argument("--tolerance", type=float, default=1e-8)
    uat.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="绘制损失曲线")
    pl.add_argument("--out", required=True, help="实验输出目录（含 runs.db）")
    pl.add_argument("--benchmark", default=None)
    pl.add_argument("--metric", default="rel_l2", choices=["rel_l2", "test_mse", "train_loss"])
    pl.add_argument("--file", default=None)
    return parser


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--benchmark", default="derivative", choices=list_benchmarks())
    parser.add_argument("--variant", default="key", choices=VARIANTS)
    parser.add_argument("--protocol", default="fixed", choices=PROTOCOLS)
    parser.add_argument("--config", default=None)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--batch", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--clip", type=float, default=None)
    parser.add_argument("--eval-every", type=int, default=None)
    parser.add_argument("--drop-rate", type=float, default=None)
    parser.add_argument("--dtype", default=None, choices=["float32", "float64"])
    parser.add_argument("--device", default=None)
    parser.add_argument("--data", default=None)
    parser.add_argument("--out", required=True)


def _run_overrides(args) -> Dict:
    overrides = parse_overrides(args.set)
    for flag, field in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "seeds", None):
        overrides["seeds"] = list(args.seeds)
    return overrides


def cmd_gen(args) -> int:
    """生成数据集并打印校验和"""
    card = get_card(args.benchmark, parse_overrides(args.set))
    logger.info("基准卡片: %s", json.dumps(card.to_dict(), ensure_ascii=False))
    _, checksums = generate_dataset(
        card,
        seed=args.seed,
        out_dir=args.out,
        train_size=args.train_size,
        test_size=args.test_size,
        jobs=args.jobs,
        force=args.force,
    )
    for split, digest in checksums.items():
        print(f"{split}: {digest}")
    return EXIT_OK


def _run_name(cfg, seed: int) -> str:
    return f"{cfg.benchmark}-{cfg.variant}-{cfg.protocol}-seed{seed}"


def _child_argv(args, seed: int) -> List[str]:
    argv = [
        sys.executable, "-m", "setonet.cli", "train",
        "--benchmark", args.benchmark, "--variant", args.variant,
        "--protocol", args.protocol, "--out", args.out,
        "--seeds", str(seed), "--skip-summary",
    ]
    if args.config:
        argv += ["--config", args.config]
    for item in args.set:
        argv += ["--set", item]
    for flag in FLAG_FIELDS:
        value = getattr(args, flag, None)
        if value is not None:
            argv += [f"--{flag.replace('_', '-')}", str(value)]
    if args.force:
        argv.append("--force")
    if args.verbose:
        argv.insert(3, "--verbose")
    return argv


def _fan_out(args, seeds: List[int]) -> int:
    """每个种子一个子进程，最多 jobs 个并行"""
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(PROJECT_ROOT), env.get("PYTHONPATH")]))
    worst = EXIT_OK
    pending = list(seeds)
    while pending:
        batch, pending = pending[: max(1, args.jobs)], pending[max(1, args.jobs):]
        procs = [(s, subprocess.Popen(_child_argv(args, s), env=env)) for s in batch]
        for seed, proc in procs:
            code = proc.wait()
            if code != EXIT_OK:
                logger.error("种子 %d 的子进程失败，退出码 %d", seed, code)
                worst = worst or code
    return worst


def cmd_train(args) -> int:
    """训练；多个种子时派生子进程并在结束后汇总"""
    cfg, card = build_train_config(
        args.benchmark, args.variant, args.protocol, args.config, _run_overrides(args)
    )
    manifest = ExperimentManifest(
        command="train", output_dir=args.out, config_path=args.config,
        overrides=list(args.set), seeds=list(cfg.seeds),
    )
    out_dir = Path(args.out)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    logger.info("实验清单: %s", json.dumps(manifest.to_dict(), ensure_ascii=False))
    logger.info("完整配置:\n%s", describe_config(cfg, card))

    if len(cfg.seeds) > 1:
        code = _fan_out(args, cfg.seeds)
        if code != EXIT_OK:
            return code
    else:
        _train_one_seed(args, cfg, card, cfg.seeds[0])

    if not args.skip_summary:
        _write_summary(out_dir, cfg.benchmark)
    return EXIT_OK


def _train_one_seed(args, cfg, card, seed: int) -> None:
    out_dir = Path(args.out)
    db = Database(get_default_db_path(args.out))
    db.init_db()
    try:
        run_mgr = RunManager(db)
        metrics_mgr = MetricsManager(db)
        name = _run_name(cfg, seed)
        existing = run_mgr.get_run_by_name(name)
        if existing and args.force:
            run_mgr.delete_run(existing.id)
        checkpoint = str(out_dir / "checkpoints" / f"{name}.pt")
        run = run_mgr.create_run(name, cfg, seed, checkpoint)
        run_mgr.update_status(run.id, "running")

        log_path = out_dir / f"metrics_{name}.jsonl"

        def on_record(record: MetricsRecord) -> None:
            metrics_mgr.add_record(run.id, record)
            with open(log_path, "a", encoding="utf-8") as file:
                file.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")

        train_set, test_set = load_datasets(cfg, card)
        try:
            train(cfg, card, test_set, train_set, seed=seed, checkpoint_path=checkpoint, on_record=on_record)
        except Exception:
            run_mgr.update_status(run.id, "failed")
            raise
        run_mgr.update_status(run.id, "finished")
    finally:
        db.close()


def _write_summary(out_dir: Path, benchmark: str) -> None:
    db = Database(get_default_db_path(str(out_dir)))
    db.init_db()
    try:
        exporter = SummaryExporter(db)
        rows = exporter.collect_summary(benchmark)
        exporter.export_summary_to_csv(rows, str(out_dir / "summary.csv"))
        print(exporter.summary_to_string(rows), end="")
    finally:
        db.close()


def cmd_eval(args) -> int:
    """评估检查点，打印 MSE 与相对 ℓ2"""
    model, cfg, card, seed = load_checkpoint(args.checkpoint)
    if args.data:
        cfg.data_dir = args.data
    _, test_set = load_datasets(cfg, card)
    record = evaluate(
        model,
        test_set,
        card,
        protocol=args.protocol,
        drop_rate=cfg.drop_rate if args.drop_rate is None else args.drop_rate,
        eval_seed=cfg.eval_seed if args.eval_seed is None else args.eval_seed,
    )
    record.seed = seed
    print(json.dumps({"protocol": args.protocol, "test_mse": record.test_mse, "rel_l2": record.rel_l2}))
    return EXIT_OK


def cmd_ablate_sensors(args) -> int:
    """对每个检查点在多种传感器数量下评估，按变体汇总种子"""
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_variant = defaultdict(list)
    train_count = None
    for path in args.checkpoints:
        model, cfg, card, _ = load_checkpoint(path)
        if args.data:
            cfg.data_dir = args.data
        _, test_set = load_datasets(cfg, card)
        train_count = test_set.n_sensors
        rows = sensor_count_ablation(
            model, test_set, card, args.counts, drop_rate=cfg.drop_rate, eval_seed=cfg.eval_seed
        )
        per_variant[cfg.variant].append(rows)

    exporter = SummaryExporter()
    summaries = {variant: aggregate_ablation(rows) for variant, rows in per_variant.items()}
    for variant, rows in summaries.items():
        exporter.export_ablation_to_csv(rows, str(out_dir / f"ablation_{variant}.csv"))
        print(f"# {variant}")
        print(exporter.ablation_to_string(rows), end="")
    plot_ablation(summaries, str(out_dir / "ablation.png"), train_count)
    return EXIT_OK


def cmd_verify_uat(args) -> int:
    """构造校验，失败时退出码 3"""
    rng = np.random.default_rng(args.seed)
    branch = random_reference_branch(rng, m=args.m, n=args.n, p=args.p, d_out=args.d_out)
    branch = perturb_for_distinct_codes(branch, rng, args.magnitude)
    report = assemble_and_verify(branch, n_test=args.n_test, rng=rng, tolerance=args.tolerance)
    print(format_report(report))
    if not report.passed:
        raise NumericalFailure("构造校验失败", details=report.to_dict())
    return EXIT_OK


def cmd_plot(args) -> int:
    """按 (变体, 协议) 绘制多种子损失曲线"""
    db_path = get_default_db_path(args.out)
    if not Path(db_path).exists():
        raise FileNotFoundError(f"找不到运行记录: {db_path}")
    db = Database(db_path)
    try:
        run_mgr = RunManager(db)
        metrics_mgr = MetricsManager(db)
        curves = defaultdict(list)
        for run in run_mgr.list_runs(benchmark=args.benchmark):
            records = metrics_mgr.get_records(run.id)
            if records:
                curves[f"{run.benchmark}/{run.variant}/{run.protocol}"].append(records)
    finally:
        db.close()
    if not curves:
        raise FileNotFoundError("运行记录中没有可绘制的指标")
    target = args.file or str(Path(args.out) / f"loss_{args.metric}.png")
    plot_loss_history(dict(curves), target, metric=args.metric)
    print(target)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-sensors": cmd_ablate_sensors,
    "verify-uat": cmd_verify_uat,
    "plot": cmd_plot,
}


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (SetONetError, OSError, ValueError) as e:
        logger.error("%s 失败: %s", args.command, e)
        if isinstance(e, NumericalFailure) and e.details:
            logger.error("诊断信息: %s", json.dumps(e.details, ensure_ascii=False, default=str))
        return exit_code_for(e)
    except Exception:
        logger.exception("%s 发生未预期的错误", args.command)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

"""
SSVR CLI - 半监督水肿严重程度回归
"""

import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click
import pandas as pd
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from .. import __version__
from ..data import (
    Dataset,
    SplitManifest,
    default_ruleset,
    extract_label,
    label_summary,
    load_manifest,
    load_ruleset,
    read_labels_csv,
    split_by_patient,
    synth_generate,
    write_synth,
)
from ..evaluation import (
    METHODS,
    evaluate,
    metrics_row,
    per_class_frame,
    run_comparison,
    train_method,
    write_metrics_csv,
    write_per_class_csv,
)
from ..model import init_params
from ..optim import Checkpoint, EpochStats, load_checkpoint, save_checkpoint
from ..utils import format_float, output_errors
from ..utils.exceptions import EXIT_USAGE, SSVRError
from .config import RESOLVED_FILE, RunConfig

console = Console()
logger = logging.getLogger(__name__)

BEST_CKPT = "best.ckpt"
LAST_CKPT = "last.ckpt"
TRAIN_LOG = "train_log.csv"


def setup_logging(
    level: str = "INFO",
    fmt: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    log_dir: Optional[Path] = None,
    log_file: str = "ssvr.log",
) -> None:
    """配置日志: 终端使用 RichHandler，另在运行目录写日志文件"""
    handlers: List[logging.Handler] = []
    if log_dir is not None:
        log_dir = Path(log_dir)
        with output_errors(log_dir / log_file):
            log_dir.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_dir / log_file, encoding="utf-8", mode="a")
        file_handler.setLevel(getattr(logging, level))
        file_handler.setFormatter(logging.Formatter(fmt))
        handlers.append(file_handler)

    console_handler = RichHandler(console=Console(stderr=True), show_path=False)
    console_handler.setLevel(getattr(logging, level))
    console_handler.setFormatter(logging.Formatter("%(message)s"))
    handlers.append(console_handler)

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level))
    root_logger.handlers.clear()
    for handler in handlers:
        root_logger.addHandler(handler)

    if log_dir is not None:
        logger.info(f"日志文件路径: {os.path.abspath(log_dir / log_file)}")


def print_banner():
    """打印欢迎横幅"""
    banner = f"""
    ╔══════════════════════════════════════════════════════════════╗
    ║                        SSVR CLI                              ║
    ║          半监督肺水肿严重程度回归 v{__version__:<26}║
    ╚══════════════════════════════════════════════════════════════╝
    """
    console.print(Panel(banner, style="bold blue"))


def print_usage_examples():
    """打印使用示例"""
    examples = """
    📖 使用示例:

    🧪 生成合成数据集:
       ssvr synth --out data/synth
       ssvr --set synth_unlabeled=500 synth --out data/small

    🏷️  从报告提取标签:
       ssvr extract-labels reports.csv --rules rules.tsv --out labels.csv

    🏋️ 训练:
       ssvr -c run.cfg train
       ssvr --set method=supervised --set run_dir=runs/sup train
       ssvr -c run.cfg train --resume

    📊 评估与对比:
       ssvr -c run.cfg eval runs/default/best.ckpt --split test --out metrics.csv
       ssvr -c run.cfg benchmark --out results/

    💡 提示:
    - 配置文件为扁平的 key = value 文本，--set key=value 覆盖文件中的取值
    - 环境变量 SSVR_THREADS 限制数据加载线程数
    - 每个运行目录都会写出 config.resolved，可直接用于复现
    """
    console.print(Panel(examples, title="📚 使用指南", style="cyan"))


def _fail(error: SSVRError, hint: Optional[str] = None) -> None:
    console.print(f"❌ {error.message}", style="red")
    if hint:
        console.print(f"💡 {hint}", style="yellow")
    sys.exit(error.exit_code)


def _config(ctx: click.Context) -> RunConfig:
    obj = ctx.obj or {}
    return RunConfig.load(obj.get("config_path"), obj.get("overrides", ()))


def _load_data(cfg: RunConfig) -> Dataset:
    return load_manifest(cfg.images_path(), cfg.labels_path())


def _resolve_split(cfg: RunConfig, dataset: Dataset, run_dir: Optional[Path] = None) -> SplitManifest:
    """优先使用 split_file / data_dir/split.csv，否则按病人重新划分"""
    candidates = [cfg.split_path()]
    if run_dir is not None:
        candidates.append(run_dir / "split.csv")
    for path in candidates:
        if path.exists():
            logger.info(f"[CLI] 使用划分文件 {path}")
            return SplitManifest.read_csv(path)
    split = split_by_patient(dataset, cfg.fractions(), cfg.seed)
    if run_dir is not None:
        split.write_csv(run_dir / "split.csv")
    return split


def display_metrics(rows: Sequence[dict], title: str) -> None:
    table = Table(title=title, show_header=True, header_style="bold magenta")
    table.add_column("方法", style="cyan")
    table.add_column("种子", style="green")
    table.add_column("RMS", style="yellow")
    table.add_column("CC", style="yellow")
    table.add_column("N", style="blue")
    for row in rows:
        table.add_row(
            row["method"], str(row["seed"]), format_float(row["rms"]), format_float(row["cc"]), str(row["n"])
        )
    console.print(table)


@click.group(invoke_without_command=True)
@click.version_option(version=__version__, prog_name="SSVR")
@click.option("--config", "-c", "config_path", type=click.Path(dir_okay=False), help="扁平 key = value 配置文件")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="覆盖配置项(可重复)")
@click.pass_context
def cli(ctx, config_path, overrides):
    """🫁 SSVR - 半监督肺水肿严重程度回归

    单个变分自编码器与有序回归器在有标签和无标签胸片上联合训练。

    主要功能:
    • 合成体模基准数据集
    • 关键词规则标签提取
    • VAE_R / 监督 / 熵最小化 三种方法的训练
    • RMS 与 Pearson 相关系数评估
    """
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["overrides"] = overrides
    if ctx.invoked_subcommand is None:
        print_banner()
        print_usage_examples()
        console.print("\n💡 使用 'ssvr --help' 查看所有命令", style="yellow")


@cli.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="输出目录(默认 data_dir)")
@click.pass_context
def synth(ctx, out_dir):
    """🧪 生成合成水肿体模数据集

    写出 images/*.png、labels.csv、truth.csv 和 split.csv。
    """
    try:
        cfg = _config(ctx)
        out = Path(out_dir or cfg.data_dir)
        setup_logging(cfg.log_level, cfg.log_format, out, cfg.log_file)
        result = synth_generate(cfg.synth_config())
        write_synth(result, out)
        cfg.dump(out / RESOLVED_FILE)

        summary = label_summary(result.dataset)
        table = Table(title="🧪 合成数据集", show_header=True, header_style="bold magenta")
        for column in summary.columns:
            table.add_column(str(column), style="cyan")
        for row in summary.itertuples(index=False):
            table.add_row(*[str(v) for v in row])
        console.print(table)
        console.print(f"✅ {result.dataset.n} 张图像已写入 {out}", style="bold green")
    except SSVRError as e:
        _fail(e, "请检查合成参数与输出目录")


@cli.command("extract-labels")
@click.argument("reports_csv", type=click.Path(dir_okay=False))
@click.option("--rules", "rules_file", type=click.Path(dir_okay=False), help="关键词规则文件(默认内置规则)")
@click.option("--out", "out_csv", default="labels.csv", show_default=True, type=click.Path(dir_okay=False))
@click.option("--cohort-only", is_flag=True, help="只给 in_cohort 为真的报告打标签")
@click.pass_context
def extract_labels(ctx, reports_csv, rules_file, out_csv, cohort_only):
    """🏷️ 按关键词规则从报告文本提取严重程度标签

    输入 CSV 需要 image_id、patient_id、report_text 列；输出与输入行数相同，
    未命中的行 severity 为空。
    """
    try:
        cfg = _config(ctx)
        setup_logging(cfg.log_level, cfg.log_format)
        rules = load_ruleset(rules_file, cohort_only) if rules_file else default_ruleset(cohort_only)
        if len(rules) == 0:
            logger.warning("[Labels] 规则集为空，所有报告都不会被标注")
            console.print("⚠️ 规则集为空", style="yellow")

        df = read_labels_csv(reports_csv, required=["image_id", "patient_id", "report_text"])
        cohort = df["in_cohort"] if "in_cohort" in df.columns else pd.Series(["1"] * len(df))
        severities = []
        for text, flag in zip(df["report_text"], cohort):
            in_cohort = flag.strip().lower() not in ("0", "false", "no")
            label = extract_label(text, rules, in_cohort)
            severities.append("" if label is None else str(label))

        out = pd.DataFrame(
            {
                "image_id": df["image_id"],
                "patient_id": df["patient_id"],
                "severity": severities,
                "report_text": df["report_text"],
            },
            columns=["image_id", "patient_id", "severity", "report_text"],
        )
        with output_errors(out_csv):
            out.to_csv(out_csv, index=False, encoding="utf-8")
        matched = sum(1 for s in severities if s)
        rate = matched / len(severities) if severities else 0.0
        console.print(
            f"✅ 匹配 {matched}/{len(severities)} 条报告 (match rate {rate:.1%}) -> {out_csv}",
            style="bold green",
        )
    except SSVRError as e:
        _fail(e, "规则文件每行格式为 <severity 0-3><TAB><phrase>")


def _write_log(rows: List[dict], path: Path) -> None:
    frame = pd.DataFrame(rows, columns=list(EpochStats(0).row()))
    with output_errors(path):
        frame.to_csv(path, index=False, float_format="%.17g")


@cli.command()
@click.option("--resume", is_flag=True, help="从运行目录中的 last.ckpt 继续训练")
@click.option("--method", type=click.Choice(METHODS), help="覆盖配置中的 method")
@click.pass_context
def train(ctx, resume, method):
    """🏋️ 训练模型并按验证集 RMS 选择检查点

    运行目录中写出 best.ckpt、last.ckpt、train_log.csv 和 config.resolved。
    """
    try:
        cfg = _config(ctx)
        if method:
            cfg = cfg.model_copy(update={"method": method})
        run_dir = Path(cfg.run_dir)
        setup_logging(cfg.log_level, cfg.log_format, run_dir, cfg.log_file)
        cfg.dump(run_dir / RESOLVED_FILE)

        dataset = _load_data(cfg)
        split = _resolve_split(cfg, dataset, run_dir)
        train_labeled, train_unlabeled, validation, _ = split.slices(dataset)
        train_config = cfg.train_config()
        logger.info(
            f"[CLI] method={cfg.method}, 训练有标签={train_labeled.n}, "
            f"无标签={train_unlabeled.n}, 验证={validation.n}"
        )

        resume_ckpt = resume_best = None
        rows: List[dict] = []
        if resume:
            resume_ckpt = load_checkpoint(run_dir / LAST_CKPT)
            resume_best = load_checkpoint(run_dir / BEST_CKPT)
            if (run_dir / TRAIN_LOG).exists():
                previous = pd.read_csv(run_dir / TRAIN_LOG)
                rows = previous[previous["epoch"] <= resume_ckpt.epoch].to_dict("records")
            console.print(f"🔁 从 epoch {resume_ckpt.epoch} 继续训练", style="cyan")

        def on_epoch_end(stats: EpochStats, params) -> None:
            rows.append(stats.row())
            _write_log(rows, run_dir / TRAIN_LOG)

        params = init_params(cfg.arch_config(), seed=cfg.seed)
        result = train_method(
            cfg.method,
            params,
            train_labeled,
            train_unlabeled,
            validation,
            train_config,
            entropy_weight=cfg.entropy_weight,
            resume=resume_ckpt,
            resume_best=resume_best,
            on_epoch_end=on_epoch_end,
        )
        save_checkpoint(result.best, run_dir / BEST_CKPT)
        save_checkpoint(result.last, run_dir / LAST_CKPT)
        _write_log(rows, run_dir / TRAIN_LOG)

        status = "提前停止" if result.stopped_early else "完成"
        console.print(
            f"✅ 训练{status}: 最优 epoch {result.best.epoch}, "
            f"validation RMS={format_float(result.best.validation_rms)}",
            style="bold green",
        )
        console.print(f"📁 运行目录: {run_dir}", style="cyan")
    except SSVRError as e:
        _fail(e, "请检查数据目录、配置文件与运行目录")


@cli.command("eval")
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--split", "split_name", type=click.Choice(["test", "validation"]), default="test", show_default=True)
@click.option("--out", "out_csv", default="metrics.csv", show_default=True, type=click.Path(dir_okay=False))
@click.option("--method", "method_name", help="写入 CSV 的方法名(默认配置中的 method)")
@click.pass_context
def eval_command(ctx, checkpoint, split_name, out_csv, method_name):
    """📊 在验证集或测试集上评估检查点

    写出 method,seed,rms,cc,n 指标 CSV 以及 *_per_class.csv 逐图像预测。
    """
    try:
        cfg = _config(ctx)
        setup_logging(cfg.log_level, cfg.log_format)
        ckpt: Checkpoint = load_checkpoint(checkpoint)
        dataset = _load_data(cfg)
        run_dir = Path(checkpoint).parent
        split = _resolve_split(cfg, dataset, run_dir)
        _, _, validation, test = split.slices(dataset)
        subset = test if split_name == "test" else validation

        metrics = evaluate(ckpt.params, subset, crop_size=cfg.crop_size, batch_size=cfg.eval_batch_size)
        method = method_name or cfg.method
        row = metrics_row(method, cfg.seed, metrics)
        out = Path(out_csv)
        write_metrics_csv([row], out)
        write_per_class_csv([per_class_frame(method, cfg.seed, metrics)], out.with_name(f"{out.stem}_per_class.csv"))

        display_metrics([row], f"📊 {split_name} 指标")
        medians = metrics.class_medians()
        console.print(
            "📈 各类别预测中位数: " + ", ".join(f"{c}: {format_float(m, 3)}" for c, m in medians.items()),
            style="cyan",
        )
    except SSVRError as e:
        _fail(e, "请确认检查点路径存在且数据划分包含有标签图像")


@cli.command()
@click.option("--out", "out_dir", default="results", show_default=True, type=click.Path(file_okay=False))
@click.option("--seeds", help="逗号分隔的种子(默认 benchmark_seeds)")
@click.option("--methods", help=f"逗号分隔的方法(默认 {','.join(METHODS)})")
@click.pass_context
def benchmark(ctx, out_dir, seeds, methods):
    """🏁 在同一数据集上对比三种方法

    每个方法 × 每个种子训练一次，在测试集上评估，写出 metrics.csv 和 per_class.csv。
    """
    try:
        cfg = _config(ctx)
        if seeds:
            cfg = cfg.model_copy(update={"benchmark_seeds": seeds})
        out = Path(out_dir)
        setup_logging(cfg.log_level, cfg.log_format, out, cfg.log_file)
        cfg.dump(out / RESOLVED_FILE)
        method_list = [m.strip() for m in methods.split(",")] if methods else list(METHODS)

        dataset = _load_data(cfg)
        split = _resolve_split(cfg, dataset, out)
        train_labeled, train_unlabeled, validation, test = split.slices(dataset)
        result = run_comparison(
            cfg.arch_config(),
            train_labeled,
            train_unlabeled,
            validation,
            test,
            cfg.train_config(),
            seeds=cfg.seeds(),
            methods=method_list,
            entropy_weight=cfg.entropy_weight,
        )
        write_metrics_csv(result.rows, out / "metrics.csv")
        write_per_class_csv(result.per_class, out / "per_class.csv")

        display_metrics(result.rows, "🏁 测试集指标")
        for m, rms in result.mean_rms().items():
            console.print(f"📈 {m}: 平均 RMS={rms:.4f}", style="cyan")
    except SSVRError as e:
        _fail(e, "请检查数据目录与方法名")


@cli.command()
def version():
    """📋 显示版本信息"""
    console.print(f"🫁 SSVR v{__version__}", style="bold blue")
    console.print("📊 半监督肺水肿严重程度回归", style="cyan")


def main(argv: Optional[Sequence[str]] = None) -> None:
    """命令行入口：click 用法错误统一映射为退出码 1"""
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name="ssvr", standalone_mode=False)
    except click.exceptions.Abort:
        console.print("❌ 已中止", style="red")
        sys.exit(EXIT_USAGE)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_USAGE)
    sys.exit(0)


if __name__ == "__main__":
    main()

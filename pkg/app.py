"""
低ランク行列復元 - コマンドライン版
gen / solve-aal / solve-apg / sweep / convergence / verify / counterexample
"""

import functools
import sys
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.table import Table

from src import __version__
from src.errors import LowRankError
from src.expcli.config import ExperimentConfig, canonical_hash, default_config, load_config
from src.expcli.experiments import rmse, run_convergence, run_counterexample, run_rmse_sweep
from src.expcli.logging_setup import setup_logging
from src.expcli.verify import run_verify
from src.expcli.writer import OutputWriter
from src.matcore.matrix_io import write_matrix
from src.objective.factored import RegularizedObjective
from src.objective.loss import LeastSquaresLoss
from src.sampling.instance import generate_instance, load_instance, save_instance
from src.settings import load_settings
from src.solvers.aal import SCHEDULES, AalConfig, aal_solve
from src.solvers.apg import ApgConfig, apg_nuclear

console = Console(stderr=True)


class CliError(click.ClickException):
    """LowRankError を赤字で表示して終了コード1で終わる"""

    exit_code = 1

    def show(self, file=None) -> None:
        console.print(f"[bold red]エラー:[/bold red] {self.message}")


def handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except LowRankError as e:
            raise CliError(str(e))
        except OSError as e:
            raise CliError(f"入出力エラー: {e}")
    return wrapper


def _config(kind: str, path: Optional[str], seed: Optional[int], out: Optional[str]) -> ExperimentConfig:
    config = load_config(path, seed) if path else default_config(kind, seed)
    if config.kind != kind:
        raise CliError(f"設定ファイルの kind が '{config.kind}' です ('{kind}' が必要です)")
    return config.with_output_dir(out) if out else config


def _writer(config: ExperimentConfig) -> OutputWriter:
    return OutputWriter(config.output_dir, config.meta())


def _solve_meta(instance_dir: str, params: dict) -> dict:
    payload = dict(params, instance=str(Path(instance_dir).name))
    return {"config_hash": canonical_hash(payload), "version": __version__}


def _summary_table(title: str, rows) -> Table:
    table = Table(title=title)
    table.add_column("項目")
    table.add_column("値", justify="right")
    for key, value in rows:
        table.add_row(str(key), str(value))
    return table


@click.group()
@click.version_option(__version__)
@click.option("--log-level", default=None, help="ログレベル (既定は LOWRANK_LOG_LEVEL)")
def cli(log_level: Optional[str]):
    """正則化付き因子分解による低ランク行列復元の実験ツール"""
    settings = load_settings()
    setup_logging(log_level or settings.log_level)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--kind", type=click.Choice(["rmse-sweep", "convergence", "verify"]), default="rmse-sweep",
              help="--config を省略したときに使う既定設定")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@handle_errors
def gen(config_path, kind, seed, out):
    """RecoveryInstance を生成してディレクトリに保存する"""
    config = load_config(config_path, seed) if config_path else default_config(kind, seed)
    inst = generate_instance(config.n, config.m, config.r_star, config.operator_spec(), config.noise_spec(), config.seed)
    path = save_instance(inst, out)
    console.print(_summary_table("インスタンス", [
        ("n×m", f"{inst.n}×{inst.m}"), ("r*", inst.r_star), ("p", inst.p), ("σ_ω", f"{inst.sigma_omega:.6g}"),
        ("保存先", path),
    ]))


@cli.command("solve-aal")
@click.argument("instance_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--lam", type=float, required=True)
@click.option("--r", "rank", type=int, default=None, help="因子の列数 (既定は r*)")
@click.option("--schedule", type=click.Choice(list(SCHEDULES)), default="none")
@click.option("--epsilon", type=float, default=1e-10)
@click.option("--max-iters", type=int, default=5000)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@handle_errors
def solve_aal(instance_dir, lam, rank, schedule, epsilon, max_iters, out):
    """保存したインスタンスを AAL で解き、因子と反復履歴を書き出す"""
    inst = load_instance(instance_dir)
    r = rank or inst.r_star
    obj = RegularizedObjective(LeastSquaresLoss.from_instance(inst), lam, r)
    config = AalConfig(schedule=schedule, epsilon=epsilon, max_iters=max_iters,
                       L_ratio=1e4 if schedule == "nesterov" else 1.0)
    result = aal_solve(obj, inst, config)

    params = {"solver": "aal", "lam": lam, "r": r, "schedule": schedule, "epsilon": epsilon, "max_iters": max_iters}
    writer = OutputWriter(out, _solve_meta(instance_dir, params))
    writer.directory.mkdir(parents=True, exist_ok=True)
    write_matrix(writer.path("U.txt"), result.fp.U)
    write_matrix(writer.path("V.txt"), result.fp.V)
    writer.write_frame("trace.csv", result.trace.to_frame())
    err = rmse(result.fp.product(), inst.M_star)
    writer.write_json("summary.json", dict(params, objective=result.objective, stop_reason=result.stop_reason,
                                           iterations=result.iterations, rmse=err))
    console.print(_summary_table("AAL", [
        ("停止理由", result.stop_reason), ("反復", result.iterations), ("Φ_λ", f"{result.objective:.12g}"),
        ("RMSE", f"{err:.6g}"),
    ]))


@cli.command("solve-apg")
@click.argument("instance_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--lam", type=float, required=True)
@click.option("--epsilon", type=float, default=1e-5)
@click.option("--max-iters", type=int, default=5000)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@handle_errors
def solve_apg(instance_dir, lam, epsilon, max_iters, out):
    """保存したインスタンスを APG (核ノルム) で解く"""
    inst = load_instance(instance_dir)
    loss = LeastSquaresLoss.from_instance(inst)
    result = apg_nuclear(loss, lam, ApgConfig(lam=lam, epsilon=epsilon, max_iters=max_iters))

    params = {"solver": "apg", "lam": lam, "epsilon": epsilon, "max_iters": max_iters}
    writer = OutputWriter(out, _solve_meta(instance_dir, params))
    writer.directory.mkdir(parents=True, exist_ok=True)
    write_matrix(writer.path("X.txt"), result.X)
    writer.write_frame("trace.csv", result.trace.to_frame())
    err = rmse(result.X, inst.M_star)
    writer.write_json("summary.json", dict(params, objective=result.objective, stop_reason=result.stop_reason,
                                           iterations=result.iterations, rmse=err))
    console.print(_summary_table("APG", [
        ("停止理由", result.stop_reason), ("反復", result.iterations), ("目的関数", f"{result.objective:.12g}"),
        ("RMSE", f"{err:.6g}"),
    ]))


def _experiment_options(func):
    func = click.option("--out", type=click.Path(file_okay=False), default=None, help="出力ディレクトリ")(func)
    func = click.option("--seed", type=int, default=None)(func)
    func = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)(func)
    return func


@cli.command()
@_experiment_options
@click.option("--workers", type=int, default=None, help="ワーカースレッド数 (既定は LOWRANK_WORKERS)")
@handle_errors
def sweep(config_path, seed, out, workers):
    """λ = ν||A*(ω)|| のグリッドで AAL と APG の RMSE・ランクを比べる"""
    config = _config("rmse-sweep", config_path, seed, out)
    result = run_rmse_sweep(config, _writer(config), workers)
    table = Table(title="λ スイープ")
    for col in ("ν", "λ", "AAL RMSE", "APG RMSE", "AAL rank", "APG rank", "試行"):
        table.add_column(col, justify="right")
    for row in result.rows:
        table.add_row(
            f"{row['nu']:.3g}", f"{row['lam']:.4g}", f"{row['aal_rmse']:.4g}", f"{row['apg_rmse']:.4g}",
            f"{row['aal_rank']:.2f}", f"{row['apg_rank']:.2f}", str(row["trials"]),
        )
    console.print(table)


@cli.command()
@_experiment_options
@handle_errors
def convergence(config_path, seed, out):
    """全観測・加速なしの AAL で最終点までの距離の減衰を記録する"""
    config = _config("convergence", config_path, seed, out)
    result = run_convergence(config, _writer(config))
    console.print(_summary_table("収束", [
        ("λ", f"{result.lam:.6g}"), ("反復", result.solve.iterations), ("傾き (log10/反復)", f"{result.fit.slope:.4g}"),
        ("R²", f"{result.fit.r_squared:.4f}"), ("当てはめ点数", result.fit.points), ("信頼できる", result.fit.reliable),
    ]))


@cli.command()
@_experiment_options
@handle_errors
def verify(config_path, seed, out):
    """理論監査をまとめて実行し JSON レポートを書く"""
    config = _config("verify", config_path, seed, out)
    report = run_verify(config, _writer(config))
    table = Table(title="理論監査")
    table.add_column("id")
    table.add_column("判定")
    table.add_column("余裕", justify="right")
    colors = {"pass": "green", "fail": "red", "not-applicable": "yellow", "info": "cyan"}
    for check in report.checks:
        margin = check.to_dict()["margin"]
        table.add_row(check.id, f"[{colors[check.verdict]}]{check.verdict}[/]", "-" if margin is None else f"{margin:.3e}")
    console.print(table)


@cli.command()
@_experiment_options
@handle_errors
def counterexample(config_path, seed, out):
    """KL 指数 1/2 の反例列を作り、減衰の傾きを当てはめる"""
    config = _config("counterexample", config_path, seed, out)
    result, report = run_counterexample(config, _writer(config))
    console.print(_summary_table("反例列", [
        ("a, λ", f"{result.a:g}, {result.lam:g}"), ("gap の傾き", f"{result.gap_fit.slope:.4f}"),
        ("grad² の傾き", f"{result.grad_fit.slope:.4f}"), ("比の極限", f"{result.ratio_limit:.6g}"),
        ("判定", ", ".join(f"{k}={v}" for k, v in report.counts().items())),
    ]))


def main() -> None:
    cli(prog_name="lowrank")


if __name__ == "__main__":
    sys.exit(main())

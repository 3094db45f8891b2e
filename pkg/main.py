"""
nullspread: null の広がり τ² を考慮した大規模多重検定ツール

このプログラムは以下のサブコマンドで動作します：
1. summarize: 測定値行列を遺伝子ごとの要約統計量に変換（collector）
2. estimate: τ² の推定（ITEB / 切断最尤法 / セントラルマッチング）
3. test: p 値の計算と棄却集合の決定（BH / Bonferroni / 二重閾値）
4. simulate: シミュレーション実験（ROC / τ 推定誤差 / FDR と検出力）

終了コード: 0 成功、2 入力・設定の誤り、3 デザインの違反、4 推定の失敗
"""

import argparse
import json
import logging
import os
import sys
import time

import pandas as pd

from collector import matrix as matrix_io
from collector.summaries import DESIGN_ALIASES, read_summary_tsv, summarize_table, summary_frame
from config import base_settings, settings
from nullspread.errors import NullSpreadError
from nullspread.estimators import ESTIMATORS, estimate_tau2
from nullspread.storage import RunManifest, write_frame, write_json
from nullspread.testing import PROCEDURES, run_procedure
from simulation.experiments import fdr_power_experiment, roc_experiment, tau_error_experiment
from simulation.scenario import ExperimentOptions, ScenarioConfig, load_simulation_config

# ロガーの設定
logger = logging.getLogger(__name__)

EXPERIMENTS = ("roc", "tau-error", "fdr-power")


def _default_output(name):
    return os.path.join(base_settings.RESULTS_DIR, name)


def cmd_summarize(args):
    """測定値行列 TSV を要約統計量 TSV に変換する

    Returns
    -------
    int
        終了コード

    Raises
    ------
    InputFormatError
        入力 TSV の形式が不正な場合
    DesignError
        デザインの前提を満たさない場合
    """
    start = time.perf_counter()
    matrix = matrix_io.read_matrix_tsv(args.input)
    pairing = matrix_io.read_pairing_tsv(args.pairing) if args.pairing else None

    if args.quantile_normalize:
        matrix = matrix_io.quantile_normalize(matrix)

    design = args.design
    if args.log_diff:
        matrix = matrix_io.paired_log_diff(matrix, pairing)
        if design != "one_sample":
            logger.info(f"対数差の計算後は one_sample デザインで要約します（指定: {design}）")
        design = "one_sample"
        pairing = None

    table = summarize_table(matrix, design, pairing)
    write_frame(summary_frame(table), args.out, sep="\t")

    manifest = RunManifest(
        command="summarize",
        config={
            "design": design,
            "quantile_normalize": args.quantile_normalize,
            "log_diff": args.log_diff,
            "pairing": args.pairing,
        },
    )
    manifest.add_input(args.input)
    if args.pairing:
        manifest.add_input(args.pairing)
    manifest.timings["total"] = time.perf_counter() - start
    manifest.write(args.out)
    logger.info(f"{len(table)} 遺伝子の要約を保存しました: {args.out}")
    return 0


def _estimate_options(args):
    return {
        "alpha1": args.alpha1,
        "alpha2": args.alpha2,
        "delta": args.delta,
        "leave_out": args.leave_out,
    }


def cmd_estimate(args):
    """要約統計量 TSV から τ² を推定して JSON に保存する"""
    start = time.perf_counter()
    table = read_summary_tsv(args.input)
    estimate = estimate_tau2(table, args.method, **_estimate_options(args))
    write_json(estimate.to_dict(), args.out)

    manifest = RunManifest(
        command="estimate",
        config={"method": args.method, **_estimate_options(args), "resolved": estimate.diagnostics},
    )
    manifest.add_input(args.input)
    manifest.timings["total"] = time.perf_counter() - start
    manifest.write(args.out)
    logger.info(f"τ̂² = {estimate.tau2:.6g}（{estimate.method}）")
    return 0


def cmd_test(args):
    """τ² を指定または推定し、遺伝子ごとの p 値と棄却フラグを CSV に保存する"""
    start = time.perf_counter()
    table = read_summary_tsv(args.input)

    config = {"procedure": args.procedure, "alpha1": args.alpha1, "alpha2": args.alpha2}
    if args.tau2 is not None:
        tau2 = args.tau2
        config["tau2"] = tau2
    else:
        estimate = estimate_tau2(table, args.estimate_method, **_estimate_options(args))
        tau2 = estimate.tau2
        config.update(
            {"estimate_method": args.estimate_method, "tau2": tau2, "estimate": estimate.diagnostics}
        )

    outcome = run_procedure(
        table,
        tau2,
        procedure=args.procedure,
        alpha1=settings.ALPHA1 if args.alpha1 is None else args.alpha1,
        alpha2=settings.ALPHA2 if args.alpha2 is None else args.alpha2,
    )
    write_frame(outcome.to_frame(), args.out)

    manifest = RunManifest(command="test", config=config)
    manifest.add_input(args.input)
    manifest.timings["total"] = time.perf_counter() - start
    manifest.write(args.out)
    return 0


def _variance_df(config: ScenarioConfig):
    """シナリオのデザインで使われる分散推定値の自由度"""
    if config.design == "two_sample_pooled":
        return config.m1 + config.m0 - 2
    if config.design == "welch":
        return "satterthwaite"
    return config.m1 - 1


def cmd_simulate(args):
    """シミュレーション実験を実行し、CSV とマニフェストを保存する"""
    start = time.perf_counter()
    if args.config:
        config, options = load_simulation_config(args.config)
    else:
        config, options = ScenarioConfig(), ExperimentOptions()

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.reps is not None:
        overrides["reps"] = args.reps
    if overrides:
        config = config.replace(**overrides)

    threads = args.threads if args.threads is not None else settings.default_threads()
    os.makedirs(args.out, exist_ok=True)

    manifest = RunManifest(
        command=f"simulate {args.experiment}",
        config={
            "scenario": config.to_dict(),
            "options": options.to_dict(),
            "df_sigma": _variance_df(config),
            "n_nonnull": config.n_nonnull,
            "n_nonnull_rounding": "floor",
            "threads": threads,
        },
        seed=config.seed,
    )
    if args.config:
        manifest.add_input(args.config)
    if config.variance_source == "empirical":
        manifest.add_input(config.variance_file)

    if args.experiment == "roc":
        frames = []
        for method in options.roc_methods:
            frames.append(roc_experiment(config, method, threads=threads).to_frame())
        output = os.path.join(args.out, base_settings.ROC_CSV)
        write_frame(pd.concat(frames, ignore_index=True), output)
    elif args.experiment == "tau-error":
        frame = tau_error_experiment(config, options.methods, options.taus, options.gammas, threads=threads)
        for row in frame.itertuples(index=False):
            manifest.timings[f"tau={row.tau},gamma={row.gamma},method={row.method}"] = row.mean_seconds
        output = os.path.join(args.out, base_settings.TAU_ERROR_CSV)
        write_frame(frame.drop(columns=["mean_seconds"]), output)
    else:
        result = fdr_power_experiment(
            config, options.alpha1, options.alpha2, options.oracle_alpha, threads=threads
        )
        output = os.path.join(args.out, base_settings.FDR_POWER_CSV)
        write_frame(result.to_frame(), output)

    manifest.timings["total"] = time.perf_counter() - start
    manifest.write(output)
    logger.info(f"シミュレーション結果を保存しました: {output}")
    return 0


def build_parser():
    """コマンドライン引数のパーサーを作成する"""
    parser = argparse.ArgumentParser(prog="nullspread", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="デバッグログを出力する")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("summarize", help="測定値行列を要約統計量に変換する")
    p.add_argument("input", help="測定値行列 TSV")
    p.add_argument("--design", choices=sorted(DESIGN_ALIASES), default="paired")
    p.add_argument("--pairing", help="対応表 TSV（実験試料<TAB>対照試料）")
    p.add_argument("--quantile-normalize", action="store_true")
    p.add_argument("--log-diff", action="store_true", help="対応のある試料の自然対数差を取る")
    p.add_argument("--out", default=_default_output(base_settings.SUMMARY_TSV))
    p.set_defaults(func=cmd_summarize)

    def add_estimator_flags(sub):
        sub.add_argument("--alpha1", type=float, help=f"BH の水準（既定: {settings.ALPHA1}）")
        sub.add_argument("--alpha2", type=float, help=f"p 値の上限（既定: {settings.ALPHA2}）")
        sub.add_argument("--delta", type=float, help="ITEB の δ（既定: √(8/N)）")
        sub.add_argument("--leave-out", type=float, help=f"切断窓の外の割合（既定: {settings.LEAVE_OUT}）")

    p = subparsers.add_parser("estimate", help="τ² を推定する")
    p.add_argument("input", help="要約統計量 TSV")
    p.add_argument("--method", choices=sorted(ESTIMATORS), default="iteb")
    add_estimator_flags(p)
    p.add_argument("--out", default=_default_output(base_settings.ESTIMATE_JSON))
    p.set_defaults(func=cmd_estimate)

    p = subparsers.add_parser("test", help="p 値と棄却集合を計算する")
    p.add_argument("input", help="要約統計量 TSV")
    source = p.add_mutually_exclusive_group()
    source.add_argument("--tau2", type=float, help="τ² を直接指定する")
    source.add_argument("--estimate-method", choices=sorted(ESTIMATORS), default="iteb")
    p.add_argument("--procedure", type=str.upper, choices=PROCEDURES, default="DUAL")
    add_estimator_flags(p)
    p.add_argument("--out", default=_default_output(base_settings.TEST_CSV))
    p.set_defaults(func=cmd_test)

    p = subparsers.add_parser("simulate", help="シミュレーション実験を実行する")
    p.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    p.add_argument("--config", help="JSON 設定ファイル")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--threads", type=int, help=f"スレッド数（既定: 環境変数 {base_settings.THREADS_ENV_NAME}）")
    p.add_argument("--out", default=base_settings.RESULTS_DIR, help="出力ディレクトリ")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None):
    """nullspread のメイン処理

    Parameters
    ----------
    argv : list of str, optional
        コマンドライン引数（省略時は sys.argv）

    Returns
    -------
    int
        終了コード
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        return args.func(args)
    except NullSpreadError as e:
        logger.error(f"{args.command} に失敗しました: {e}")
        print(json.dumps(e.to_dict(), ensure_ascii=False), file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"ファイルの入出力に失敗しました: {e}")
        print(json.dumps({"error": "io_error", "message": str(e)}, ensure_ascii=False), file=sys.stderr)
        return 2


if __name__ == "__main__":
    # ロギングの基本設定
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    sys.exit(main())

"""
シミュレーション実験のドライバー

ROC 曲線（FDP と感度）、τ² の推定誤差、FDR と検出力（オラクル検定との比較）、
推定量の実行時間比を計算します。各反復は独立なのでスレッドプールで並列に実行し、
結果は反復番号の順に集計します。
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import settings
from nullspread.errors import ConfigError, DomainError, EstimationError
from nullspread.estimators import ItebConfig, TauEstimate, estimate_tau2, iteb, truncated_mle
from nullspread.testing import fixed_level_reject, gene_pvalues, oracle_reject
from simulation.scenario import ScenarioConfig, gen_scenario

# ロガーの設定
logger = logging.getLogger(__name__)

ITEB_TEST = "iteb_test"
T_TEST = "t_test"
ROC_METHODS = (ITEB_TEST, T_TEST)


def run_replications(func: Callable[[int], object], reps: int, threads: Optional[int] = None) -> List:
    """func(rep_index) を reps 回実行し、反復番号順のリストを返す"""
    if threads is None:
        threads = settings.default_threads()
    if threads <= 1 or reps <= 1:
        return [func(rep_index) for rep_index in range(reps)]

    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, range(reps)))


def fdp_and_sensitivity(rejected, is_nonnull) -> Tuple[float, Optional[float]]:
    """棄却集合の FDP と感度を計算する

    FDP = 偽陽性数 / max(棄却数, 1)。非 null がない場合の感度は None です。
    """
    rejected = np.asarray(rejected, dtype=bool)
    is_nonnull = np.asarray(is_nonnull, dtype=bool)
    n_rejected = int(rejected.sum())
    false_positives = int(np.count_nonzero(rejected & ~is_nonnull))
    fdp = false_positives / max(n_rejected, 1)

    n_nonnull = int(is_nonnull.sum())
    if n_nonnull == 0:
        return fdp, None
    return fdp, int(np.count_nonzero(rejected & is_nonnull)) / n_nonnull


def roc_points(pvalues, is_nonnull) -> Tuple[np.ndarray, np.ndarray]:
    """p 値の小さい順に k = 0..N 個棄却したときの (FDP, 感度) を返す"""
    p = np.asarray(pvalues, dtype=float)
    truth = np.asarray(is_nonnull, dtype=bool)[np.argsort(p, kind="stable")]

    true_positives = np.concatenate(([0], np.cumsum(truth)))
    counts = np.arange(p.size + 1)
    fdp = (counts - true_positives) / np.maximum(counts, 1)
    n_nonnull = int(truth.sum())
    sensitivity = true_positives / n_nonnull if n_nonnull else np.zeros(p.size + 1)
    return fdp, sensitivity


@dataclass(frozen=True)
class RocCurve:
    """棄却数ごとに反復平均した ROC 曲線"""

    method: str
    rejections: np.ndarray
    fdp: np.ndarray
    sensitivity: np.ndarray
    reps: int

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fdp.tolist(), self.sensitivity.tolist()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "method": self.method,
                "rejections": self.rejections,
                "fdp": self.fdp,
                "sensitivity": self.sensitivity,
            }
        )


def sensitivity_at_fdp(curve: RocCurve, target_fdp: float) -> float:
    """FDP ≤ target_fdp の点のうち最大の感度を返す"""
    eligible = curve.fdp <= target_fdp
    return float(np.max(curve.sensitivity[eligible])) if eligible.any() else 0.0


def roc_experiment(
    config: ScenarioConfig,
    method: str = ITEB_TEST,
    iteb_config: Optional[ItebConfig] = None,
    threads: Optional[int] = None,
) -> RocCurve:
    """反復ごとに p 値で遺伝子を順位付けし、棄却数を変えて ROC 曲線を作る

    Parameters
    ----------
    config : ScenarioConfig
        シナリオ設定
    method : str, optional
        iteb_test（ITEB の τ̂² を使用）または t_test（τ² = 0）
    iteb_config : ItebConfig, optional
        ITEB の設定
    threads : int, optional
        スレッド数

    Returns
    -------
    RocCurve
        反復平均した ROC 曲線
    """
    if method not in ROC_METHODS:
        raise ConfigError(f"不明な ROC 手法です: {method}")

    def one_rep(rep_index):
        scenario = gen_scenario(config, rep_index)
        table = scenario.summaries()
        tau2 = iteb(table, iteb_config).tau2 if method == ITEB_TEST else 0.0
        p = gene_pvalues(table.xbar, table.s2, table.df_sigma, tau2)
        return roc_points(p, scenario.is_nonnull)

    results = run_replications(one_rep, config.reps, threads)
    fdp = np.mean([r[0] for r in results], axis=0)
    sensitivity = np.mean([r[1] for r in results], axis=0)
    logger.info(f"ROC 曲線（{method}、{config.reps} 反復）を計算しました")
    return RocCurve(
        method=method,
        rejections=np.arange(config.n_genes + 1),
        fdp=fdp,
        sensitivity=sensitivity,
        reps=config.reps,
    )


def _resolve_estimator(method) -> Tuple[str, Callable]:
    """手法名または推定関数から (名前, table → τ̂²) を作る"""
    if callable(method):
        name = getattr(method, "__name__", "custom")
        func = method
    else:
        name = str(method).lower()
        func = lambda table: estimate_tau2(table, name)  # noqa: E731

    def run(table):
        result = func(table)
        return result.tau2 if isinstance(result, TauEstimate) else float(result)

    return name, run


def relative_error(tau2_hat, tau2):
    """|τ̂² − τ²| / (τ² + 0.1)"""
    return abs(tau2_hat - tau2) / (tau2 + 0.1)


def tau_error_experiment(
    config: ScenarioConfig,
    methods: Sequence = ("iteb", "tmle", "cm"),
    taus: Optional[Sequence[float]] = None,
    gammas: Optional[Sequence[float]] = None,
    threads: Optional[int] = None,
) -> pd.DataFrame:
    """(τ, γ) の格子点と手法ごとに τ² の平均相対誤差を計算する

    推定に失敗した反復は failures として数え、平均から除外します。

    Parameters
    ----------
    config : ScenarioConfig
        シナリオ設定（tau と gamma は格子で上書き）
    methods : sequence
        手法名（iteb / tmle / cm）または table を受け取る推定関数
    taus : sequence of float, optional
        τ の格子（省略時は config.tau のみ）
    gammas : sequence of float, optional
        γ の格子（省略時は config.gamma のみ）
    threads : int, optional
        スレッド数

    Returns
    -------
    pandas.DataFrame
        tau, gamma, method, mean_relative_error, reps, failures, mean_seconds 列

    Raises
    ------
    ConfigError
        reps が 2 未満の場合
    """
    if config.reps < 2:
        raise ConfigError(f"tau-error 実験には reps ≥ 2 が必要です: {config.reps}")
    estimators = [_resolve_estimator(method) for method in methods]
    taus = list(taus) if taus is not None else [config.tau]
    gammas = list(gammas) if gammas is not None else [config.gamma]

    rows = []
    for tau in taus:
        for gamma in gammas:
            cell = config.replace(tau=float(tau), gamma=float(gamma))
            tau2 = cell.tau**2

            def one_rep(rep_index, cell=cell, tau2=tau2):
                table = gen_scenario(cell, rep_index).summaries()
                outcome = {}
                for name, run in estimators:
                    start = time.perf_counter()
                    try:
                        error = relative_error(run(table), tau2)
                    except (EstimationError, DomainError) as e:
                        logger.warning(f"{name} の推定に失敗しました（τ={cell.tau}, γ={cell.gamma}, rep={rep_index}）: {e}")
                        error = None
                    outcome[name] = (error, time.perf_counter() - start)
                return outcome

            results = run_replications(one_rep, cell.reps, threads)
            for name, _ in estimators:
                errors = [r[name][0] for r in results if r[name][0] is not None]
                rows.append(
                    {
                        "tau": cell.tau,
                        "gamma": cell.gamma,
                        "method": name,
                        "mean_relative_error": float(np.mean(errors)) if errors else math.nan,
                        "reps": cell.reps,
                        "failures": cell.reps - len(errors),
                        "mean_seconds": float(np.mean([r[name][1] for r in results])),
                    }
                )
            logger.info(f"τ={cell.tau}, γ={cell.gamma} の {len(estimators)} 手法を評価しました")

    return pd.DataFrame(rows)


@dataclass(frozen=True)
class FdrPowerResult:
    """FDR と検出力の反復平均（非 null がない場合の検出力は None）"""

    mean_fdp: float
    fdp_se: Optional[float]
    power: Optional[float]
    power_se: Optional[float]
    fixed_level_power: Optional[float]
    oracle_power: Optional[float]
    oracle_power_se: Optional[float]
    mean_rejections: float
    reps: int
    failures: int

    def to_dict(self):
        return asdict(self)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.to_dict()])


def _mean_and_se(values) -> Tuple[Optional[float], Optional[float]]:
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, None
    return mean, float(np.std(values, ddof=1) / math.sqrt(len(values)))


def fdr_power_experiment(
    config: ScenarioConfig,
    alpha1: float = settings.ALPHA1,
    alpha2: float = settings.ALPHA2,
    oracle_alpha: float = settings.ORACLE_ALPHA,
    threads: Optional[int] = None,
) -> FdrPowerResult:
    """ITEB の棄却集合 J_K の FDP・感度と、オラクル検定の感度を比較する

    Parameters
    ----------
    config : ScenarioConfig
        シナリオ設定
    alpha1 : float, optional
        BH の水準
    alpha2 : float, optional
        p 値の上限
    oracle_alpha : float, optional
        遺伝子ごとの検定水準（推定 τ̂² の固定水準検定とオラクル検定で共通）
    threads : int, optional
        スレッド数

    Returns
    -------
    FdrPowerResult
        FDP・検出力の平均と標準誤差
    """
    iteb_config = ItebConfig(alpha1=alpha1, alpha2=alpha2)
    true_tau2 = config.tau**2

    def one_rep(rep_index):
        scenario = gen_scenario(config, rep_index)
        table = scenario.summaries()
        try:
            estimate = iteb(table, iteb_config)
        except EstimationError as e:
            logger.warning(f"ITEB の推定に失敗しました（rep={rep_index}）: {e}")
            return None
        fdp, power = fdp_and_sensitivity(estimate.rejected_mask, scenario.is_nonnull)
        _, fixed_power = fdp_and_sensitivity(
            fixed_level_reject(table, estimate.tau2, oracle_alpha), scenario.is_nonnull
        )
        _, oracle_power = fdp_and_sensitivity(
            oracle_reject(table, true_tau2, oracle_alpha), scenario.is_nonnull
        )
        return fdp, power, fixed_power, oracle_power, int(estimate.rejected_mask.sum())

    results = run_replications(one_rep, config.reps, threads)
    completed = [r for r in results if r is not None]
    if not completed:
        raise EstimationError("すべての反復で推定に失敗しました")

    mean_fdp, fdp_se = _mean_and_se([r[0] for r in completed])
    power, power_se = _mean_and_se([r[1] for r in completed])
    fixed_power, _ = _mean_and_se([r[2] for r in completed])
    oracle_power, oracle_se = _mean_and_se([r[3] for r in completed])

    result = FdrPowerResult(
        mean_fdp=mean_fdp,
        fdp_se=fdp_se,
        power=power,
        power_se=power_se,
        fixed_level_power=fixed_power,
        oracle_power=oracle_power,
        oracle_power_se=oracle_se,
        mean_rejections=float(np.mean([r[4] for r in completed])),
        reps=config.reps,
        failures=config.reps - len(completed),
    )
    logger.info(f"FDR/検出力: 平均 FDP={mean_fdp:.4f}, 検出力={power}, オラクル={oracle_power}")
    return result


def runtime_ratio(config: ScenarioConfig, rep_index: int = 0) -> Dict[str, float]:
    """1 回分のデータで切断最尤法と ITEB の実行時間を比較する"""
    table = gen_scenario(config, rep_index).summaries()

    start = time.perf_counter()
    iteb(table)
    iteb_seconds = time.perf_counter() - start

    start = time.perf_counter()
    truncated_mle(table)
    tmle_seconds = time.perf_counter() - start

    ratio = tmle_seconds / iteb_seconds if iteb_seconds > 0 else math.inf
    if ratio < 10:
        logger.warning(f"切断最尤法と ITEB の実行時間比が小さいです: {ratio:.1f} 倍")
    else:
        logger.info(f"切断最尤法は ITEB の {ratio:.1f} 倍の時間がかかりました")
    return {"iteb_seconds": iteb_seconds, "tmle_seconds": tmle_seconds, "ratio": ratio}

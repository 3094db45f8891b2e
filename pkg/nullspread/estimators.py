"""
null の広がり τ² の推定モジュール

反復経験ベイズ法 (ITEB)、切断最尤法 (TMLE)、セントラルマッチング (CM) の
3 つの推定量を提供します。いずれも遺伝子ごとの要約統計量
(x̄ᵢ, σ̂²_{x̄ᵢ}, df) を入力とし、TauEstimate を返します。

関数:
    eb_pilot: 調整済み経験ベイズ推定量
    iteb: 反復経験ベイズ法
    truncated_mle: 切断最尤法
    central_matching: セントラルマッチング
    estimate_tau2: 手法名による振り分け
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import special

from collector.summaries import as_summary_table
from config import settings
from nullspread.errors import DomainError, EstimationError
from nullspread.optimize import bisect_decreasing, golden_section_minimize
from nullspread.testing import dual_threshold, gene_pvalues

# ロガーの設定
logger = logging.getLogger(__name__)

ITEB = "ITEB"
TMLE = "TMLE"
CM = "CM"

# 切断窓・ヒストグラムに必要な最小数
MIN_WINDOW_GENES = 10
MIN_POPULATED_BINS = 10

# TMLE の σ² 探索区間（基準分散に対する倍率）
VARIANCE_BRACKET = (1e-6, 1e6)


@dataclass(frozen=True)
class TauEstimate:
    """τ² の推定結果

    Attributes
    ----------
    tau2 : float
        推定値 (≥ 0)
    method : str
        ITEB / TMLE / CM
    iterations : int
        反復回数
    surviving_set : tuple of str
        最終的に残った null 候補の ID（ITEB のみ）
    rejected_set : tuple of str
        最終反復の棄却集合 J_K の ID（ITEB のみ）
    removed_set : tuple of str
        反復中に取り除かれた ID（ITEB のみ）
    trace : tuple of float
        反復ごとの τ̂²（ITEB のみ）
    diagnostics : dict
        手法ごとの補助情報
    """

    tau2: float
    method: str
    iterations: int
    surviving_set: Tuple[str, ...] = ()
    rejected_set: Tuple[str, ...] = ()
    removed_set: Tuple[str, ...] = ()
    trace: Tuple[float, ...] = ()
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    surviving_mask: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    rejected_mask: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def to_dict(self):
        """JSON 出力用の辞書に変換する"""
        return {
            "tau2": self.tau2,
            "method": self.method,
            "iterations": self.iterations,
            "trace": list(self.trace),
            "surviving_set": list(self.surviving_set),
            "rejected_set": list(self.rejected_set),
            "removed_set": list(self.removed_set),
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class ItebConfig:
    """ITEB の設定

    delta と max_iterations を省略した場合は resolve で遺伝子数 N から
    δ = √(8/N)、最大反復回数 N を決めます。
    """

    alpha1: float = settings.ALPHA1
    alpha2: float = settings.ALPHA2
    delta: Optional[float] = None
    max_iterations: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.alpha1 < 1:
            raise DomainError(f"alpha1 は (0, 1) の範囲である必要があります: {self.alpha1}")
        if not 0 < self.alpha2 <= 1:
            raise DomainError(f"alpha2 は (0, 1] の範囲である必要があります: {self.alpha2}")
        if self.delta is not None and not self.delta >= 0:
            raise DomainError(f"delta は 0 以上である必要があります: {self.delta}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise DomainError(f"max_iterations は 1 以上である必要があります: {self.max_iterations}")

    def resolve(self, n_genes):
        delta = self.delta if self.delta is not None else math.sqrt(8.0 / n_genes)
        max_iterations = self.max_iterations if self.max_iterations is not None else n_genes
        return replace(self, delta=delta, max_iterations=max_iterations)

    def to_dict(self):
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "delta": self.delta,
            "max_iterations": self.max_iterations,
        }


def _pilot_value(xbar, s2, delta):
    return float(np.mean(xbar * xbar) - (1.0 + delta) * np.mean(s2))


def eb_pilot(summaries, delta, clamp=True):
    """調整済み経験ベイズ推定量 [mean(x̄²) − (1+δ)·mean(σ̂²)]₊ を計算する

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        対象の遺伝子集合
    delta : float
        分散推定値の膨張率 (≥ 0)
    clamp : bool, optional
        False の場合は 0 で切り詰める前の値を返す

    Returns
    -------
    float
        τ² の推定値

    Raises
    ------
    DomainError
        遺伝子集合が空、または delta が負の場合
    """
    if not delta >= 0:
        raise DomainError(f"delta は 0 以上である必要があります: {delta}")
    table = as_summary_table(summaries)
    if len(table) == 0:
        raise DomainError("遺伝子集合が空です", reason="empty_gene_set")
    value = _pilot_value(table.xbar, table.s2, delta)
    return max(value, 0.0) if clamp else value


def iteb(summaries, config: Optional[ItebConfig] = None) -> TauEstimate:
    """反復経験ベイズ法で τ² を推定する

    S₀ を全遺伝子として、毎回すべての遺伝子の p 値を現在の τ̂² で計算し、
    BH(α₁) かつ p ≤ α₂ の遺伝子 J_k を S から取り除いて τ̂² を更新します。
    S が変化しなくなった時点（または最大反復回数）で終了します。

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        遺伝子ごとの十分統計量 (N ≥ 2)
    config : ItebConfig, optional
        水準などの設定

    Returns
    -------
    TauEstimate
        推定値・残存集合・棄却集合・反復ごとの推移

    Raises
    ------
    DomainError
        遺伝子数が 2 未満の場合
    EstimationError
        すべての遺伝子が取り除かれた場合
    """
    table = as_summary_table(summaries)
    n_genes = len(table)
    if n_genes < 2:
        raise DomainError(f"ITEB には 2 遺伝子以上が必要です: {n_genes}", reason="too_few_genes")
    config = (config or ItebConfig()).resolve(n_genes)

    alive = np.ones(n_genes, dtype=bool)
    rejected = np.zeros(n_genes, dtype=bool)
    tau2 = max(_pilot_value(table.xbar, table.s2, config.delta), 0.0)
    trace = [tau2]
    iterations = 0
    converged = False

    while iterations < config.max_iterations:
        iterations += 1
        p = gene_pvalues(table.xbar, table.s2, table.df_sigma, tau2)
        rejected = dual_threshold(p, config.alpha1, config.alpha2)

        newly_removed = rejected & alive
        if not newly_removed.any():
            converged = True
            break

        alive &= ~rejected
        if not alive.any():
            raise EstimationError("all hypotheses removed", reason="all_hypotheses_removed")
        tau2 = max(_pilot_value(table.xbar[alive], table.s2[alive], config.delta), 0.0)
        trace.append(tau2)
        logger.debug(
            f"ITEB 反復 {iterations}: {int(newly_removed.sum())} 遺伝子を除去、τ̂²={tau2:.6g}"
        )

    if not converged:
        logger.warning(f"ITEB が最大反復回数 {config.max_iterations} に達しました")

    ids = table.ids
    estimate = TauEstimate(
        tau2=tau2,
        method=ITEB,
        iterations=iterations,
        surviving_set=tuple(ids[i] for i in np.flatnonzero(alive)),
        rejected_set=tuple(ids[i] for i in np.flatnonzero(rejected)),
        removed_set=tuple(ids[i] for i in np.flatnonzero(~alive)),
        trace=tuple(trace),
        diagnostics={
            **config.to_dict(),
            "n_genes": n_genes,
            "n_surviving": int(alive.sum()),
            "n_rejected": int(rejected.sum()),
            "converged": converged,
        },
        surviving_mask=alive,
        rejected_mask=rejected,
    )
    logger.info(f"ITEB: τ̂²={tau2:.6g}（{iterations} 回、残存 {int(alive.sum())}/{n_genes}）")
    return estimate


def _truncation_window(table, leave_out):
    """|x̄| の (1 − leave_out) 分位点 δ₀ と、|x̄| < δ₀ の遺伝子マスクを求める"""
    if not 0 < leave_out < 1:
        raise DomainError(f"leave_out は (0, 1) の範囲である必要があります: {leave_out}")
    if len(table) == 0:
        raise DomainError("遺伝子集合が空です", reason="empty_gene_set")

    abs_xbar = np.abs(table.xbar)
    delta0 = float(np.quantile(abs_xbar, 1.0 - leave_out))
    inside = abs_xbar < delta0
    n_inside = int(inside.sum())
    if n_inside < MIN_WINDOW_GENES:
        raise EstimationError(
            f"切断窓 (−{delta0:.6g}, {delta0:.6g}) 内の遺伝子が {n_inside} 個しかありません",
            reason="empty_window",
        )
    return delta0, inside


def _tau2_upper(table):
    return 3.0 * eb_pilot(table, 0.0) + 10.0 * float(np.max(table.s2))


def _log_truncation_mass(delta0, total_var):
    """log H = log P(|N(0, total_var)| < δ₀)"""
    with np.errstate(divide="ignore"):
        return np.log(special.erf(delta0 / np.sqrt(2.0 * total_var)))


def _tmle_terms(tau2, v, xbar, s2, df, delta0):
    """遺伝子ごとの切断負対数尤度（定数項を除く）"""
    total = tau2 + v
    return (
        _log_truncation_mass(delta0, total)
        + 0.5 * np.log(total)
        + xbar * xbar / (2.0 * total)
        + 0.5 * df * np.log(v)
        + df * s2 / (2.0 * v)
    )


def truncated_mle(
    summaries,
    leave_out=settings.LEAVE_OUT,
    tol=settings.TMLE_TOL,
    max_outer=settings.TMLE_MAX_OUTER,
) -> TauEstimate:
    """切断最尤法で τ² を推定する

    |x̄ᵢ| < δ₀ の遺伝子だけで切断正規尤度を作り、遺伝子ごとの σ²_{x̄ᵢ} と
    τ² を交互に最小化します。各半ステップは目的関数を増やさない場合のみ採用します。

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        遺伝子ごとの十分統計量
    leave_out : float, optional
        切断窓の外に置く割合 (0, 1)
    tol : float, optional
        τ² の相対変化の収束判定 |Δτ²| ≤ tol·(τ² + 0.1)
    max_outer : int, optional
        交互最小化の反復上限

    Returns
    -------
    TauEstimate
        推定値と診断情報（δ₀、窓内遺伝子数、目的関数の推移など）

    Raises
    ------
    EstimationError
        切断窓が空、または目的関数が非有限になった場合
    """
    table = as_summary_table(summaries)
    delta0, inside = _truncation_window(table, leave_out)
    tau2_max = _tau2_upper(table)

    xbar = table.xbar[inside]
    s2 = table.s2[inside]
    df = table.df_sigma[inside]

    positive = table.s2[table.s2 > 0]
    fallback = float(np.mean(positive)) if positive.size else 1.0
    s_ref = np.where(s2 > 0, s2, fallback)
    log_lower = np.log(VARIANCE_BRACKET[0] * s_ref)
    log_upper = np.log(VARIANCE_BRACKET[1] * s_ref)
    inner_tol = settings.TMLE_INNER_TOL

    def objective(tau2_value, v_values):
        return float(np.sum(_tmle_terms(tau2_value, v_values, xbar, s2, df, delta0)))

    tau2 = 0.0
    v = s_ref.copy()
    current = objective(tau2, v)
    if not math.isfinite(current):
        raise EstimationError("切断尤度が非有限です", reason="nonfinite_objective")
    history = [current]
    converged = False
    outer = 0

    while outer < max_outer:
        outer += 1

        # σ²_{x̄ᵢ} の更新（τ² 固定、遺伝子ごとに独立）
        per_gene = _tmle_terms(tau2, v, xbar, s2, df, delta0)
        result = golden_section_minimize(
            lambda log_v: _tmle_terms(tau2, np.exp(log_v), xbar, s2, df, delta0),
            log_lower,
            log_upper,
            tol=inner_tol,
        )
        improved = result.minimum <= per_gene
        v = np.where(improved, np.exp(result.argmin), v)
        current = objective(tau2, v)
        history.append(current)

        # τ² の更新（σ² 固定）
        result = golden_section_minimize(
            lambda t: np.asarray(objective(float(t), v)),
            0.0,
            tau2_max,
            tol=inner_tol * max(tau2_max, 1e-300),
        )
        candidate = float(result.argmin)
        candidate_value = objective(candidate, v)
        previous = tau2
        if candidate_value <= current:
            tau2, current = candidate, candidate_value
        history.append(current)

        if not math.isfinite(current):
            raise EstimationError("切断尤度が非有限です", reason="nonfinite_objective")
        if abs(tau2 - previous) <= tol * (tau2 + 0.1):
            converged = True
            break

    if not converged:
        logger.warning(f"切断最尤法が {max_outer} 回で収束しませんでした")
    logger.info(f"TMLE: τ̂²={tau2:.6g}（{outer} 回、窓内 {int(inside.sum())} 遺伝子）")

    return TauEstimate(
        tau2=tau2,
        method=TMLE,
        iterations=outer,
        diagnostics={
            "leave_out": leave_out,
            "delta0": delta0,
            "window_size": int(inside.sum()),
            "tau2_max": tau2_max,
            "objective_history": history,
            "converged": converged,
            "at_upper_bound": bool(tau2 >= tau2_max),
        },
    )


def curvature(variances, tau2):
    """混合正規密度の −log 密度の原点での二次係数 Σ(v+τ²)^{-3/2} / (2Σ(v+τ²)^{-1/2})"""
    total = np.asarray(variances, dtype=float) + tau2
    with np.errstate(divide="ignore"):
        numerator = np.sum(total**-1.5)
        denominator = 2.0 * np.sum(total**-0.5)
    if not math.isfinite(numerator):
        return math.inf
    return float(numerator / denominator)


def solve_curvature_equation(variances, beta2, tau2_max, grid_tol=settings.CM_GRID_TOL):
    """curvature(variances, τ²) = beta2 を τ² ∈ [0, tau2_max] で解く

    Returns
    -------
    tuple of (float, bool)
        解と、区間内で根が見つからず端点を返したかどうか
    """
    if curvature(variances, 0.0) <= beta2:
        return 0.0, False
    if curvature(variances, tau2_max) > beta2:
        return float(tau2_max), True

    root = bisect_decreasing(
        lambda t: np.asarray(curvature(variances, float(t)) - beta2),
        0.0,
        tau2_max,
        tol=grid_tol,
        max_iter=200,
    )
    return max(float(root), 0.0), False


def central_matching(
    summaries,
    leave_out=settings.LEAVE_OUT,
    n_bins=settings.CM_BINS,
    grid_tol=settings.CM_GRID_TOL,
    density=None,
) -> TauEstimate:
    """セントラルマッチングで τ² を推定する

    [−δ₀, δ₀] の x̄ のヒストグラムから −log 密度に二次式を当てはめ、
    二次係数 β̂₂ と一致する τ² を二分法で求めます。

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        遺伝子ごとの十分統計量
    leave_out : float, optional
        切断窓の外に置く割合
    n_bins : int, optional
        ヒストグラムのビン数
    grid_tol : float, optional
        τ² の許容誤差
    density : callable, optional
        ヒストグラムの代わりに使う密度関数（ビン中心の配列を受け取る）

    Returns
    -------
    TauEstimate
        推定値と診断情報（β̂₂、境界フラグなど）

    Raises
    ------
    EstimationError
        β̂₂ ≤ 0、または有効なビンが不足する場合
    """
    table = as_summary_table(summaries)
    delta0, inside = _truncation_window(table, leave_out)
    if n_bins < MIN_POPULATED_BINS:
        raise DomainError(f"n_bins は {MIN_POPULATED_BINS} 以上である必要があります: {n_bins}")

    edges = np.linspace(-delta0, delta0, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    if density is None:
        counts, _ = np.histogram(table.xbar[inside], bins=edges)
        values = counts / (counts.sum() * (edges[1] - edges[0]))
    else:
        values = np.asarray(density(centers), dtype=float)

    populated = values > 0
    if int(populated.sum()) < MIN_POPULATED_BINS:
        raise EstimationError(
            f"central matching failed: 有効なビンが {int(populated.sum())} 個しかありません",
            reason="central_matching_failed",
        )

    coefficients = np.polyfit(centers[populated], -np.log(values[populated]), 2)
    beta2 = float(coefficients[0])
    if beta2 <= 0:
        raise EstimationError(
            f"central matching failed: β̂₂={beta2:.6g} ≤ 0", reason="central_matching_failed"
        )

    tau2_max = _tau2_upper(table)
    tau2, at_boundary = solve_curvature_equation(table.s2, beta2, tau2_max, grid_tol)
    if at_boundary:
        logger.warning(f"セントラルマッチングの根が [0, {tau2_max:.6g}] 内にありません")
    logger.info(f"CM: τ̂²={tau2:.6g}（β̂₂={beta2:.6g}）")

    return TauEstimate(
        tau2=tau2,
        method=CM,
        iterations=1,
        diagnostics={
            "leave_out": leave_out,
            "delta0": delta0,
            "window_size": int(inside.sum()),
            "n_bins": n_bins,
            "populated_bins": int(populated.sum()),
            "beta2": beta2,
            "tau2_max": tau2_max,
            "unbracketed": at_boundary,
        },
    )


def _run_iteb(summaries, alpha1=None, alpha2=None, delta=None, max_iterations=None):
    config = ItebConfig(
        alpha1=settings.ALPHA1 if alpha1 is None else alpha1,
        alpha2=settings.ALPHA2 if alpha2 is None else alpha2,
        delta=delta,
        max_iterations=max_iterations,
    )
    return iteb(summaries, config)


def _run_tmle(summaries, leave_out=None, tol=None, max_outer=None):
    return truncated_mle(
        summaries,
        leave_out=settings.LEAVE_OUT if leave_out is None else leave_out,
        tol=settings.TMLE_TOL if tol is None else tol,
        max_outer=settings.TMLE_MAX_OUTER if max_outer is None else max_outer,
    )


def _run_cm(summaries, leave_out=None, n_bins=None, grid_tol=None):
    return central_matching(
        summaries,
        leave_out=settings.LEAVE_OUT if leave_out is None else leave_out,
        n_bins=settings.CM_BINS if n_bins is None else n_bins,
        grid_tol=settings.CM_GRID_TOL if grid_tol is None else grid_tol,
    )


# 手法名 → (推定関数, 受け付けるオプション)
ESTIMATORS = {
    "iteb": (_run_iteb, ("alpha1", "alpha2", "delta", "max_iterations")),
    "tmle": (_run_tmle, ("leave_out", "tol", "max_outer")),
    "cm": (_run_cm, ("leave_out", "n_bins", "grid_tol")),
}


def estimate_tau2(summaries, method="iteb", **options) -> TauEstimate:
    """手法名を指定して τ² を推定する

    その手法が受け付けないオプションと None のオプションは無視します。

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        遺伝子ごとの十分統計量
    method : str, optional
        iteb / tmle / cm
    **options
        各推定量のオプション

    Returns
    -------
    TauEstimate
        推定結果
    """
    key = method.lower()
    if key not in ESTIMATORS:
        raise DomainError(f"不明な推定手法です: {method}", reason="unknown_method")
    func, accepted = ESTIMATORS[key]
    kwargs = {name: value for name, value in options.items() if name in accepted and value is not None}
    return func(summaries, **kwargs)

"""
τ² の推定値から p 値と棄却集合を作るモジュール

BH（Benjamini-Hochberg）ステップアップ法、Bonferroni 法、BH と p 値の
上限を組み合わせた二重閾値法、および真の τ² を知るオラクル検定を提供します。
棄却集合は入力順にそろえた真偽値配列で表します。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from collector.summaries import as_summary_table
from nullspread.distributions import TINY_PROBABILITY, null_quantile_values, null_sf_values
from nullspread.errors import DomainError

# ロガーの設定
logger = logging.getLogger(__name__)

BH = "BH"
BONFERRONI = "BONFERRONI"
DUAL = "DUAL"
PROCEDURES = (BH, BONFERRONI, DUAL)


@dataclass(frozen=True)
class TestOutcome:
    """検定結果

    Attributes
    ----------
    ids : tuple of str
        遺伝子 ID
    pvalues : numpy.ndarray
        遺伝子ごとの p 値 (0, 1]
    rejected : numpy.ndarray
        遺伝子ごとの棄却フラグ
    procedure : str
        BH / BONFERRONI / DUAL
    levels : tuple of float
        (alpha1,) または (alpha1, alpha2)
    tau2_used : float
        p 値の計算に使った τ²
    """

    __test__ = False

    ids: Tuple[str, ...]
    pvalues: np.ndarray
    rejected: np.ndarray
    procedure: str
    levels: Tuple[float, ...]
    tau2_used: float

    @property
    def n_rejected(self) -> int:
        return int(np.count_nonzero(self.rejected))

    def to_frame(self) -> pd.DataFrame:
        """p 値の昇順（同値は入力順）に並べた結果表を作成する"""
        order = np.argsort(self.pvalues, kind="stable")
        return pd.DataFrame(
            {
                "gene_id": [self.ids[i] for i in order],
                "pvalue": self.pvalues[order],
                "rejected": self.rejected[order],
            }
        )


def _check_level(alpha, name, allow_zero=False):
    lower_ok = alpha >= 0 if allow_zero else alpha > 0
    if not (lower_ok and alpha <= 1):
        raise DomainError(f"{name} は有効な有意水準である必要があります: {alpha}")


def gene_pvalues(xbar, s2, df_sigma, tau2):
    """遺伝子ごとの p 値 pᵢ = F̃ᵢ(x̄ᵢ²/(τ² + σ̂ᵢ²)) を配列で計算する

    τ² + σ̂ᵢ² = 0 の遺伝子は、x̄ᵢ = 0 なら p = 1、それ以外は最小の正の値とします。

    Parameters
    ----------
    xbar : numpy.ndarray
        効果量の推定値
    s2 : numpy.ndarray
        分散推定値
    df_sigma : numpy.ndarray
        分散推定値の自由度
    tau2 : float
        null の広がり τ² (≥ 0)

    Returns
    -------
    numpy.ndarray
        (0, 1] の p 値
    """
    xbar = np.asarray(xbar, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    df_sigma = np.asarray(df_sigma, dtype=float)

    denominator = tau2 + s2
    degenerate = denominator <= 0

    pvalues = np.ones(xbar.shape, dtype=float)
    regular = ~degenerate
    if regular.any():
        stat = xbar[regular] ** 2 / denominator[regular]
        pvalues[regular] = null_sf_values(stat, s2[regular], tau2, df_sigma[regular])
    pvalues[degenerate & (xbar != 0)] = TINY_PROBABILITY
    return pvalues


def pvalues(summaries, tau2):
    """要約統計量と τ² から両側の p 値を計算する

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        遺伝子ごとの十分統計量
    tau2 : float
        null の広がり τ² (≥ 0)

    Returns
    -------
    numpy.ndarray
        遺伝子ごとの p 値

    Raises
    ------
    DomainError
        tau2 が負の場合
    """
    if not tau2 >= 0:
        raise DomainError(f"tau2 は 0 以上である必要があります: {tau2}")
    table = as_summary_table(summaries)
    return gene_pvalues(table.xbar, table.s2, table.df_sigma, float(tau2))


def bh(pvalues, alpha):
    """BH ステップアップ法の棄却集合を求める

    p₍ᵢ*₎ ≤ (i*/N)·α を満たす最大の i* を求め、p ≤ p₍ᵢ*₎ をすべて棄却します。

    Parameters
    ----------
    pvalues : array_like
        p 値
    alpha : float
        FDR の水準

    Returns
    -------
    numpy.ndarray
        棄却フラグ（入力順）
    """
    _check_level(alpha, "alpha")
    p = np.asarray(pvalues, dtype=float)
    n = p.size
    if n == 0:
        return np.zeros(0, dtype=bool)

    order = np.argsort(p, kind="stable")
    ordered = p[order]
    thresholds = alpha * np.arange(1, n + 1) / n
    passing = np.nonzero(ordered <= thresholds)[0]
    if passing.size == 0:
        return np.zeros(n, dtype=bool)
    cutoff = ordered[passing[-1]]
    return p <= cutoff


def dual_threshold(pvalues, alpha1, alpha2):
    """BH の棄却集合と {p ≤ alpha2} の共通部分を求める

    Parameters
    ----------
    pvalues : array_like
        p 値
    alpha1 : float
        BH の水準
    alpha2 : float
        p 値の上限 (0 ≤ alpha2 ≤ 1)

    Returns
    -------
    numpy.ndarray
        棄却フラグ（入力順）
    """
    _check_level(alpha2, "alpha2", allow_zero=True)
    p = np.asarray(pvalues, dtype=float)
    return bh(p, alpha1) & (p <= alpha2)


def bonferroni(pvalues, alpha):
    """Bonferroni 法（pᵢ ≤ α/N）の棄却集合を求める"""
    _check_level(alpha, "alpha")
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    return p <= alpha / p.size


def fixed_level_reject(summaries, tau2, alpha):
    """与えられた τ² の p 値で遺伝子ごとに水準 alpha の検定を行う"""
    _check_level(alpha, "alpha")
    return pvalues(summaries, tau2) <= alpha


def oracle_reject(summaries, true_tau2, alpha):
    """真の τ² を知るオラクル検定の棄却集合を求める

    x̄ᵢ² > F̃ᵢ⁻¹(α)·(σ̂ᵢ² + τ²) の遺伝子を棄却します（シミュレーション専用）。

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        遺伝子ごとの十分統計量
    true_tau2 : float
        真の τ²
    alpha : float
        遺伝子ごとの有意水準

    Returns
    -------
    numpy.ndarray
        棄却フラグ（入力順）
    """
    _check_level(alpha, "alpha")
    if not true_tau2 >= 0:
        raise DomainError(f"true_tau2 は 0 以上である必要があります: {true_tau2}")
    table = as_summary_table(summaries)

    denominator = table.s2 + true_tau2
    degenerate = denominator <= 0
    thresholds = np.zeros(len(table), dtype=float)
    regular = ~degenerate
    if regular.any():
        quantiles = null_quantile_values(
            alpha, table.s2[regular], float(true_tau2), table.df_sigma[regular]
        )
        thresholds[regular] = quantiles * denominator[regular]
    return table.xbar**2 > thresholds


def run_procedure(
    summaries, tau2, procedure=DUAL, alpha1=0.1, alpha2: Optional[float] = 0.01
) -> TestOutcome:
    """指定した手続きで検定を行い TestOutcome を返す

    Parameters
    ----------
    summaries : list of GeneSummary or SummaryTable
        遺伝子ごとの十分統計量
    tau2 : float
        p 値の計算に使う τ²
    procedure : str, optional
        BH / BONFERRONI / DUAL（大文字小文字は区別しない）
    alpha1 : float, optional
        BH・Bonferroni の水準
    alpha2 : float, optional
        DUAL の p 値上限

    Returns
    -------
    TestOutcome
        p 値と棄却フラグ

    Raises
    ------
    DomainError
        手続き名や水準が不正な場合
    """
    name = procedure.upper()
    table = as_summary_table(summaries)
    p = pvalues(table, tau2)

    if name == BH:
        rejected, levels = bh(p, alpha1), (alpha1,)
    elif name == BONFERRONI:
        rejected, levels = bonferroni(p, alpha1), (alpha1,)
    elif name == DUAL:
        rejected, levels = dual_threshold(p, alpha1, alpha2), (alpha1, alpha2)
    else:
        raise DomainError(f"不明な検定手続きです: {procedure}", reason="unknown_procedure")

    outcome = TestOutcome(
        ids=table.ids,
        pvalues=p,
        rejected=rejected,
        procedure=name,
        levels=tuple(float(level) for level in levels),
        tau2_used=float(tau2),
    )
    logger.info(f"{name} 手続きで {outcome.n_rejected}/{len(table)} 遺伝子を棄却しました")
    return outcome

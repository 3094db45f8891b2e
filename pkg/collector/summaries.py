"""
測定値行列を遺伝子ごとの十分統計量 (x̄ᵢ, σ̂²_{x̄ᵢ}, df) に要約するモジュール

対応のある検定、プールした分散による二標本検定、不等分散（Welch）の
二標本検定、一標本（差分データ）の各デザインに対応します。

関数:
    summarize_paired / summarize_pooled / summarize_welch / summarize_one_sample
    summarize: デザイン名による振り分け
    read_summary_tsv / summary_frame: 要約 TSV の入出力
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from collector.matrix import CONTROL, DIFFERENCE, EXPERIMENT, ReplicateMatrix, resolve_pairs
from nullspread.errors import DesignError, InputFormatError

# ロガーの設定
logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["gene_id", "xbar", "s2", "df"]

# デザイン名（別名を含む）→ 正規名
DESIGN_ALIASES = {
    "paired": "paired",
    "pooled": "pooled",
    "two_sample_pooled": "pooled",
    "welch": "welch",
    "one_sample": "one_sample",
}


@dataclass(frozen=True)
class GeneSummary:
    """遺伝子ごとの十分統計量

    Attributes
    ----------
    id : str
        遺伝子 ID
    xbar : float
        効果量の推定値（平均の差、または対の差の平均）
    s2 : float
        xbar の分散推定値 (≥ 0)
    df_sigma : float
        s2 の自由度 (> 0)
    """

    id: str
    xbar: float
    s2: float
    df_sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.xbar) and math.isfinite(self.s2) and math.isfinite(self.df_sigma)):
            raise InputFormatError(f"非有限値を含む要約統計量です: {self.id}")
        if self.s2 < 0:
            raise InputFormatError(f"s2 は 0 以上である必要があります: {self.id}")
        if self.df_sigma <= 0:
            raise InputFormatError(f"df は正である必要があります: {self.id}")


@dataclass(frozen=True)
class SummaryTable:
    """GeneSummary の列指向表現（推定・検定の内部計算用）"""

    ids: Tuple[str, ...]
    xbar: np.ndarray
    s2: np.ndarray
    df_sigma: np.ndarray

    def __len__(self):
        return len(self.ids)

    def __iter__(self) -> Iterator[GeneSummary]:
        for i, gene_id in enumerate(self.ids):
            yield GeneSummary(gene_id, float(self.xbar[i]), float(self.s2[i]), float(self.df_sigma[i]))

    @classmethod
    def from_summaries(cls, summaries: Iterable[GeneSummary]) -> "SummaryTable":
        items = list(summaries)
        return cls(
            ids=tuple(item.id for item in items),
            xbar=np.array([item.xbar for item in items], dtype=float),
            s2=np.array([item.s2 for item in items], dtype=float),
            df_sigma=np.array([item.df_sigma for item in items], dtype=float),
        )

    @classmethod
    def from_arrays(cls, ids, xbar, s2, df_sigma) -> "SummaryTable":
        xbar = np.asarray(xbar, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        df_sigma = np.broadcast_to(np.asarray(df_sigma, dtype=float), xbar.shape).copy()
        if not (np.all(np.isfinite(xbar)) and np.all(np.isfinite(s2)) and np.all(np.isfinite(df_sigma))):
            raise InputFormatError("非有限値を含む要約統計量です")
        if np.any(s2 < 0) or np.any(df_sigma <= 0):
            raise InputFormatError("s2 は 0 以上、df は正である必要があります")
        return cls(ids=tuple(str(i) for i in ids), xbar=xbar, s2=s2, df_sigma=df_sigma)

    def subset(self, mask: np.ndarray) -> "SummaryTable":
        """真偽値マスクで遺伝子を絞り込む"""
        mask = np.asarray(mask, dtype=bool)
        return SummaryTable(
            ids=tuple(gene_id for gene_id, keep in zip(self.ids, mask) if keep),
            xbar=self.xbar[mask],
            s2=self.s2[mask],
            df_sigma=self.df_sigma[mask],
        )

    def to_list(self) -> List[GeneSummary]:
        return list(self)


def as_summary_table(summaries: Union[SummaryTable, Sequence[GeneSummary]]) -> SummaryTable:
    """GeneSummary のリストまたは SummaryTable を SummaryTable に揃える"""
    if isinstance(summaries, SummaryTable):
        return summaries
    return SummaryTable.from_summaries(summaries)


def _sum_of_squares(values: np.ndarray) -> np.ndarray:
    """行ごとの平均からの偏差平方和"""
    centered = values - values.mean(axis=1, keepdims=True)
    return np.sum(centered * centered, axis=1)


def _one_sample_table(gene_ids: Sequence[str], values: np.ndarray) -> SummaryTable:
    """一標本の要約（x̄ = 行平均、s2 = 不偏分散 / m、df = m − 1）"""
    m = values.shape[1]
    if m < 2:
        raise DesignError(f"分散の推定には 2 列以上が必要です（{m} 列）", reason="insufficient_replicates")
    xbar = values.mean(axis=1)
    s2 = _sum_of_squares(values) / (m - 1) / m
    return SummaryTable.from_arrays(gene_ids, xbar, s2, float(m - 1))


def _two_groups(matrix: ReplicateMatrix) -> Tuple[np.ndarray, np.ndarray]:
    x = matrix.group_values(EXPERIMENT)
    z = matrix.group_values(CONTROL)
    if x.shape[1] < 2 or z.shape[1] < 2:
        raise DesignError(
            f"各群に 2 反復以上が必要です（実験群 {x.shape[1]}、対照群 {z.shape[1]}）",
            reason="insufficient_replicates",
        )
    return x, z


def paired_table(matrix: ReplicateMatrix, pairing=None) -> SummaryTable:
    """summarize_paired の SummaryTable 版"""
    pairs = resolve_pairs(matrix, pairing)
    if len(pairs) < 2:
        raise DesignError(f"対は 2 組以上必要です（{len(pairs)} 組）", reason="insufficient_pairs")
    values = matrix.values.to_numpy(dtype=float)
    diffs = np.column_stack([values[:, i] - values[:, j] for i, j in pairs])
    return _one_sample_table(matrix.gene_ids, diffs)


def pooled_table(matrix: ReplicateMatrix) -> SummaryTable:
    """summarize_pooled の SummaryTable 版"""
    x, z = _two_groups(matrix)
    m1, m0 = x.shape[1], z.shape[1]
    pooled_var = (_sum_of_squares(x) + _sum_of_squares(z)) / (m1 + m0 - 2)
    xbar = x.mean(axis=1) - z.mean(axis=1)
    s2 = pooled_var * (1.0 / m1 + 1.0 / m0)
    return SummaryTable.from_arrays(matrix.gene_ids, xbar, s2, float(m1 + m0 - 2))


def welch_table(matrix: ReplicateMatrix) -> SummaryTable:
    """summarize_welch の SummaryTable 版"""
    x, z = _two_groups(matrix)
    m1, m0 = x.shape[1], z.shape[1]
    ss_x, ss_z = _sum_of_squares(x), _sum_of_squares(z)

    xbar = x.mean(axis=1) - z.mean(axis=1)
    s2 = ss_x / (m1 * (m1 - 1)) + ss_z / (m0 * (m0 - 1))

    # 自由度: (a + b)² / (a²/(m1−1) + b²/(m0−1))、a = SSx/m1, b = SSz/m0
    a = ss_x / m1
    b = ss_z / m0
    denominator = a * a / (m1 - 1) + b * b / (m0 - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        df = (a + b) ** 2 / denominator
    # 両群とも分散 0 の場合はプールした場合の自由度
    df = np.where(denominator > 0, df, float(m1 + m0 - 2))
    df = np.clip(df, min(m1, m0) - 1, m1 + m0 - 2)
    return SummaryTable.from_arrays(matrix.gene_ids, xbar, s2, df)


def one_sample_table(matrix: ReplicateMatrix) -> SummaryTable:
    """summarize_one_sample の SummaryTable 版"""
    if all(group == DIFFERENCE for group in matrix.groups):
        values = matrix.values.to_numpy(dtype=float)
    else:
        values = matrix.group_values(DIFFERENCE)
    return _one_sample_table(matrix.gene_ids, values)


def summarize_paired(matrix: ReplicateMatrix, pairing=None) -> List[GeneSummary]:
    """対応のある検定の十分統計量を計算する

    Parameters
    ----------
    matrix : ReplicateMatrix
        バッチラベル（または pairing）で実験群と対照群が 1 対 1 に対応する行列
    pairing : dict, optional
        実験試料名 → 対照試料名

    Returns
    -------
    list of GeneSummary
        x̄ = 対の差の平均、s2 = 差の不偏分散 / m₁、df = m₁ − 1

    Raises
    ------
    DesignError
        対応の取れない列がある、または対が 2 組未満の場合
    """
    return paired_table(matrix, pairing).to_list()


def summarize_pooled(matrix: ReplicateMatrix) -> List[GeneSummary]:
    """プールした群内分散による二標本検定の十分統計量を計算する

    Parameters
    ----------
    matrix : ReplicateMatrix
        実験群・対照群それぞれ 2 反復以上の行列

    Returns
    -------
    list of GeneSummary
        x̄ = mean(x) − mean(z)、s2 = プール分散 × (1/m₁ + 1/m₀)、df = m₁ + m₀ − 2

    Raises
    ------
    DesignError
        反復数が不足している場合
    """
    return pooled_table(matrix).to_list()


def summarize_welch(matrix: ReplicateMatrix) -> List[GeneSummary]:
    """不等分散（Welch）の二標本検定の十分統計量を計算する

    Parameters
    ----------
    matrix : ReplicateMatrix
        実験群・対照群それぞれ 2 反復以上の行列

    Returns
    -------
    list of GeneSummary
        s2 = s_x²/m₁ + s_z²/m₀、df は Satterthwaite 型の近似自由度

    Raises
    ------
    DesignError
        反復数が不足している場合
    """
    return welch_table(matrix).to_list()


def summarize_one_sample(matrix: ReplicateMatrix) -> List[GeneSummary]:
    """一標本（差分データ）の十分統計量を計算する"""
    return one_sample_table(matrix).to_list()


def summarize_table(matrix: ReplicateMatrix, design: str, pairing=None) -> SummaryTable:
    """デザイン名に応じて要約を計算する（SummaryTable を返す）

    Parameters
    ----------
    matrix : ReplicateMatrix
        測定値行列
    design : str
        paired / pooled (two_sample_pooled) / welch / one_sample
    pairing : dict, optional
        paired デザインの対応表

    Returns
    -------
    SummaryTable
        遺伝子ごとの十分統計量

    Raises
    ------
    DesignError
        デザイン名が不明、またはデザインの前提を満たさない場合
    """
    canonical = DESIGN_ALIASES.get(design)
    if canonical is None:
        raise DesignError(f"不明なデザインです: {design}", reason="unknown_design")
    if canonical == "paired":
        table = paired_table(matrix, pairing)
    elif canonical == "pooled":
        table = pooled_table(matrix)
    elif canonical == "welch":
        table = welch_table(matrix)
    else:
        table = one_sample_table(matrix)
    logger.debug(f"{design} デザインで {len(table)} 遺伝子を要約しました")
    return table


def summarize(matrix: ReplicateMatrix, design: str, pairing=None) -> List[GeneSummary]:
    """デザイン名に応じて要約を計算する"""
    return summarize_table(matrix, design, pairing).to_list()


def summary_frame(summaries) -> pd.DataFrame:
    """要約統計量を gene_id, xbar, s2, df 列の DataFrame に変換する"""
    table = as_summary_table(summaries)
    return pd.DataFrame(
        {
            "gene_id": list(table.ids),
            "xbar": table.xbar,
            "s2": table.s2,
            "df": table.df_sigma,
        },
        columns=SUMMARY_COLUMNS,
    )


def read_summary_tsv(path: str, limit: Optional[int] = None) -> SummaryTable:
    """要約 TSV (gene_id, xbar, s2, df) を読み込む

    Parameters
    ----------
    path : str
        要約 TSV ファイルのパス
    limit : int, optional
        読み込む最大行数（デバッグ用）

    Returns
    -------
    SummaryTable
        読み込んだ要約統計量

    Raises
    ------
    InputFormatError
        形式が不正な場合（行番号付き）
    """
    try:
        raw = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False, nrows=limit)
    except pd.errors.EmptyDataError:
        raise InputFormatError("入力ファイルが空です", line=1, reason="empty_gene_set")
    except pd.errors.ParserError as e:
        raise InputFormatError(f"TSV の解析に失敗しました: {e}")

    if list(raw.columns) != SUMMARY_COLUMNS:
        raise InputFormatError(f"ヘッダーは {' / '.join(SUMMARY_COLUMNS)} である必要があります", line=1)
    if len(raw) == 0:
        raise InputFormatError("遺伝子が 1 件もありません", line=2, reason="empty_gene_set")

    numeric = raw[["xbar", "s2", "df"]].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    valid = (
        np.all(np.isfinite(numeric), axis=1) & (numeric[:, 1] >= 0) & (numeric[:, 2] > 0)
    ) & (raw["gene_id"].to_numpy() != "")
    bad = np.where(~valid)[0]
    if bad.size:
        line = int(bad[0]) + 2
        raise InputFormatError(f"要約統計量の値が不正です（{line} 行目）", line=line)

    table = SummaryTable.from_arrays(raw["gene_id"].tolist(), numeric[:, 0], numeric[:, 1], numeric[:, 2])
    logger.info(f"{len(table)} 遺伝子の要約統計量を読み込みました: {path}")
    return table

"""
遺伝子 × 反復の測定値行列を読み込み・前処理するモジュール

このモジュールは TSV 形式の測定値行列を読み込み、分位点正規化や
対応のある試料間の対数差の計算といった前処理を行います。

入力 TSV の形式:
    gene_id<TAB>sample:group[:batch]<TAB>...
    group は experiment / control / difference のいずれか

関数:
    read_matrix_tsv: TSV ファイルから ReplicateMatrix を作成
    resolve_pairs: 実験群と対照群の列の対応を決定
    read_pairing_tsv: 対応表ファイルの読み込み
    quantile_normalize: 分位点正規化
    paired_log_diff: 対応のある試料間の対数差
"""

import logging
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from nullspread.errors import DesignError, DomainError, InputFormatError

# ロガーの設定
logger = logging.getLogger(__name__)

EXPERIMENT = "experiment"
CONTROL = "control"
DIFFERENCE = "difference"
GROUPS = (EXPERIMENT, CONTROL, DIFFERENCE)


@dataclass(frozen=True)
class ReplicateMatrix:
    """遺伝子 × 反復の測定値行列

    Attributes
    ----------
    values : pandas.DataFrame
        行が遺伝子（index が gene_id）、列が試料の測定値
    groups : tuple of str
        各列の群ラベル（experiment / control / difference）
    batches : tuple of str or None
        各列のバッチ（対応）ラベル。対応のない列は None
    """

    values: pd.DataFrame
    groups: Tuple[str, ...]
    batches: Optional[Tuple[Optional[str], ...]] = None

    def __post_init__(self):
        if len(self.values) == 0:
            raise InputFormatError("遺伝子が 1 件もありません", reason="empty_gene_set")
        if len(self.groups) != self.values.shape[1]:
            raise InputFormatError("群ラベルの数が列数と一致しません")
        unknown = sorted(set(self.groups) - set(GROUPS))
        if unknown:
            raise InputFormatError(f"不明な群ラベルです: {unknown}")
        if self.batches is not None and len(self.batches) != self.values.shape[1]:
            raise InputFormatError("バッチラベルの数が列数と一致しません")
        if not np.all(np.isfinite(self.values.to_numpy(dtype=float))):
            raise InputFormatError("欠測値または非有限値が含まれています", reason="missing_value")

    @property
    def gene_ids(self) -> List[str]:
        return [str(gene_id) for gene_id in self.values.index]

    @property
    def n_genes(self) -> int:
        return len(self.values)

    @property
    def samples(self) -> List[str]:
        return [str(column) for column in self.values.columns]

    def group_values(self, group: str) -> np.ndarray:
        """指定した群の列だけを取り出す

        Parameters
        ----------
        group : str
            群ラベル

        Returns
        -------
        numpy.ndarray
            N × (該当列数) の配列
        """
        mask = np.array([g == group for g in self.groups], dtype=bool)
        return self.values.to_numpy(dtype=float)[:, mask]

    def with_values(self, values: np.ndarray) -> "ReplicateMatrix":
        """メタデータを保ったまま測定値だけを差し替える"""
        frame = pd.DataFrame(values, index=self.values.index, columns=self.values.columns)
        return ReplicateMatrix(values=frame, groups=self.groups, batches=self.batches)


def _parse_header(columns: Sequence[str]) -> Tuple[Tuple[str, ...], Tuple[str, ...], Tuple]:
    """ヘッダーの sample:group[:batch] 表記を分解する"""
    samples, groups, batches = [], [], []
    for column in columns:
        parts = str(column).split(":")
        if len(parts) not in (2, 3) or not parts[0]:
            raise InputFormatError(
                f"ヘッダーの列名は sample:group[:batch] 形式である必要があります: {column}",
                line=1,
            )
        group = parts[1].lower()
        if group not in GROUPS:
            raise InputFormatError(f"不明な群ラベルです: {column}", line=1)
        samples.append(parts[0])
        groups.append(group)
        batches.append(parts[2] if len(parts) == 3 and parts[2] else None)
    if len(set(samples)) != len(samples):
        raise InputFormatError("試料名が重複しています", line=1)
    return tuple(samples), tuple(groups), tuple(batches)


def read_matrix_tsv(path: str) -> ReplicateMatrix:
    """TSV ファイルから測定値行列を読み込む

    Parameters
    ----------
    path : str
        入力 TSV ファイルのパス

    Returns
    -------
    ReplicateMatrix
        読み込んだ測定値行列

    Raises
    ------
    InputFormatError
        形式が不正な場合（行番号付き）
    """
    logger.info(f"測定値行列を読み込みます: {path}")

    try:
        raw = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise InputFormatError("入力ファイルが空です", line=1, reason="empty_gene_set")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        line = int(match.group(1)) if match else None
        raise InputFormatError(f"TSV の解析に失敗しました: {e}", line=line)

    if raw.shape[1] < 2:
        raise InputFormatError("測定値の列がありません", line=1)

    samples, groups, batches = _parse_header(raw.columns[1:])
    gene_ids = raw.iloc[:, 0].tolist()
    if len(gene_ids) == 0:
        raise InputFormatError("遺伝子が 1 件もありません", line=2, reason="empty_gene_set")

    numeric = raw.iloc[:, 1:].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad_rows = np.where(~np.all(np.isfinite(numeric), axis=1))[0]
    if bad_rows.size:
        line = int(bad_rows[0]) + 2
        raise InputFormatError(f"数値でない、または欠測した値があります（{line} 行目）", line=line)
    for position, gene_id in enumerate(gene_ids):
        if not gene_id:
            raise InputFormatError("gene_id が空です", line=position + 2)

    values = pd.DataFrame(numeric, index=pd.Index(gene_ids, name="gene_id"), columns=list(samples))
    has_batches = any(batch is not None for batch in batches)
    matrix = ReplicateMatrix(
        values=values, groups=groups, batches=batches if has_batches else None
    )
    logger.info(f"{matrix.n_genes} 遺伝子 × {len(samples)} 試料を読み込みました")
    return matrix


def read_pairing_tsv(path: str) -> Dict[str, str]:
    """実験試料と対照試料の対応表を読み込む

    Parameters
    ----------
    path : str
        2 列 (experiment_sample, control_sample) の TSV ファイル

    Returns
    -------
    dict
        実験試料名 → 対照試料名

    Raises
    ------
    InputFormatError
        形式が不正な場合
    """
    pairing = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise InputFormatError("対応表は 2 列である必要があります", line=line_number)
            if fields[0] in pairing:
                raise InputFormatError(f"実験試料が重複しています: {fields[0]}", line=line_number)
            pairing[fields[0]] = fields[1]
    return pairing


def resolve_pairs(
    matrix: ReplicateMatrix, pairing: Optional[Dict[str, str]] = None
) -> List[Tuple[int, int]]:
    """実験群と対照群の列の対応を決定する

    pairing が与えられた場合はそれを使い、そうでなければヘッダーのバッチラベルで
    対応を取ります。対応は推測しません。

    Parameters
    ----------
    matrix : ReplicateMatrix
        測定値行列
    pairing : dict, optional
        実験試料名 → 対照試料名

    Returns
    -------
    list of tuple
        (実験列の位置, 対照列の位置) のリスト

    Raises
    ------
    DesignError
        対応の取れない列がある場合
    """
    samples = matrix.samples
    position = {sample: i for i, sample in enumerate(samples)}
    experiment_cols = [i for i, g in enumerate(matrix.groups) if g == EXPERIMENT]
    control_cols = [i for i, g in enumerate(matrix.groups) if g == CONTROL]

    pairs = []
    if pairing is not None:
        used_controls = set()
        for exp_sample, ctrl_sample in pairing.items():
            if exp_sample not in position or ctrl_sample not in position:
                raise DesignError(f"対応表の試料が行列にありません: {exp_sample}, {ctrl_sample}")
            i, j = position[exp_sample], position[ctrl_sample]
            if matrix.groups[i] != EXPERIMENT or matrix.groups[j] != CONTROL:
                raise DesignError(f"対応表の群が不正です: {exp_sample}, {ctrl_sample}")
            if j in used_controls:
                raise DesignError(f"対照試料が複数回使われています: {ctrl_sample}")
            used_controls.add(j)
            pairs.append((i, j))
        unpaired = (set(experiment_cols) | set(control_cols)) - {c for pair in pairs for c in pair}
    else:
        if matrix.batches is None:
            raise DesignError("対応のある解析にはバッチラベルまたは対応表が必要です", reason="unpaired")
        by_batch: Dict[str, Dict[str, List[int]]] = {}
        unpaired = set()
        for i, (group, batch) in enumerate(zip(matrix.groups, matrix.batches)):
            if group == DIFFERENCE:
                continue
            if batch is None:
                unpaired.add(i)
                continue
            by_batch.setdefault(batch, {EXPERIMENT: [], CONTROL: []})[group].append(i)
        for batch, members in by_batch.items():
            if len(members[EXPERIMENT]) != 1 or len(members[CONTROL]) != 1:
                unpaired.update(members[EXPERIMENT] + members[CONTROL])
                continue
            pairs.append((members[EXPERIMENT][0], members[CONTROL][0]))

    if unpaired:
        names = sorted(samples[i] for i in unpaired)
        raise DesignError(f"対応の取れない列があります: {names}", reason="unpaired")

    pairs.sort()
    return pairs


def quantile_normalize(matrix: ReplicateMatrix) -> ReplicateMatrix:
    """分位点正規化を行う

    各列の経験分布を、列ごとに並べ替えた値の平均プロファイルで置き換えます。
    同順位の値には、該当する順位の目標値の平均を割り当てます。

    Parameters
    ----------
    matrix : ReplicateMatrix
        測定値行列

    Returns
    -------
    ReplicateMatrix
        正規化後の測定値行列（メタデータは保持）
    """
    values = matrix.values.to_numpy(dtype=float)
    profile = np.sort(values, axis=0).mean(axis=1)

    normalized = np.empty_like(values)
    for column in range(values.shape[1]):
        col = values[:, column]
        order = np.argsort(col, kind="stable")
        _, inverse, counts = np.unique(col[order], return_inverse=True, return_counts=True)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        tied_means = np.add.reduceat(profile, starts) / counts
        normalized[order, column] = tied_means[inverse]

    logger.debug(f"{values.shape[1]} 列を分位点正規化しました")
    return matrix.with_values(normalized)


def paired_log_diff(
    matrix: ReplicateMatrix, pairing: Optional[Dict[str, str]] = None
) -> ReplicateMatrix:
    """対応のある実験試料と対照試料の対数差（自然対数）を計算する

    Parameters
    ----------
    matrix : ReplicateMatrix
        測定値行列（値は正）
    pairing : dict, optional
        実験試料名 → 対照試料名（省略時はバッチラベルで対応）

    Returns
    -------
    ReplicateMatrix
        列が各対の log(experiment) − log(control) の行列（群は difference）

    Raises
    ------
    DomainError
        正でない測定値がある場合
    DesignError
        対応の取れない列がある場合、または対が 1 組もない場合
    """
    pairs = resolve_pairs(matrix, pairing)
    if not pairs:
        raise DesignError("対数差を取る実験試料と対照試料の対がありません", reason="insufficient_pairs")
    values = matrix.values.to_numpy(dtype=float)
    used = sorted({c for pair in pairs for c in pair})
    if np.any(values[:, used] <= 0):
        raise DomainError("対数差には正の測定値が必要です", reason="nonpositive_value")

    samples = matrix.samples
    diffs = np.column_stack([np.log(values[:, i]) - np.log(values[:, j]) for i, j in pairs])
    columns = [f"{samples[i]}-{samples[j]}" for i, j in pairs]
    batches = tuple(
        (matrix.batches[i] if matrix.batches is not None else None) or columns[k]
        for k, (i, _) in enumerate(pairs)
    )
    frame = pd.DataFrame(diffs, index=matrix.values.index, columns=columns)
    logger.info(f"{len(pairs)} 組の対数差を計算しました")
    return ReplicateMatrix(values=frame, groups=tuple(DIFFERENCE for _ in pairs), batches=batches)

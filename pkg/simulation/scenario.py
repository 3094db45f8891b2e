"""
シミュレーションのシナリオ設定と合成データの生成

null の遺伝子は μᵢ ∼ N(0, τ²)、非 null の遺伝子は |μᵢ| ∼ U[1, max(3, 10τ)] とし、
遺伝子ごとの分散 σ²ᵢ を指定の分布から引いて反復測定値を生成します。
乱数は (seed, rep_index) から導いた独立なストリームを使うため、
反復の実行順序に関係なく同じ結果になります。
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from collector.matrix import CONTROL, DIFFERENCE, EXPERIMENT, ReplicateMatrix
from collector.summaries import DESIGN_ALIASES, SummaryTable, summarize_table
from config import settings
from nullspread.errors import ConfigError

# ロガーの設定
logger = logging.getLogger(__name__)

NOISE_FAMILIES = ("gaussian", "laplacian")
VARIANCE_SOURCES = ("chisq1", "empirical", "constant")
SCENARIO_DESIGNS = ("two_sample_pooled", "paired", "welch", "one_sample")
INTEGER_FIELDS = ("n_genes", "m1", "m0", "seed", "reps")
REAL_FIELDS = ("gamma", "tau", "variance_value")


@dataclass(frozen=True)
class ScenarioConfig:
    """合成実験の設定

    Attributes
    ----------
    n_genes : int
        遺伝子数 N
    m1 : int
        実験群の反復数（paired / one_sample では対の数・反復数）
    m0 : int
        対照群の反復数（paired では m1 と同じ、one_sample では未使用）
    gamma : float
        非 null の割合 [0, 1)
    tau : float
        null の広がりの標準偏差 τ (≥ 0)
    noise : str
        gaussian / laplacian
    variance_source : str
        chisq1 / empirical / constant
    variance_file : str, optional
        empirical の場合の分散ファイル（1 列のテキスト）
    variance_value : float
        constant の場合の分散
    design : str
        two_sample_pooled / paired / welch / one_sample
    seed : int
        乱数シード
    reps : int
        反復（レプリケーション）回数
    """

    n_genes: int = 15000
    m1: int = 5
    m0: int = 5
    gamma: float = 0.01
    tau: float = 1.0
    noise: str = "gaussian"
    variance_source: str = "chisq1"
    variance_file: Optional[str] = None
    variance_value: float = 1.0
    design: str = "two_sample_pooled"
    seed: int = settings.DEFAULT_SEED
    reps: int = settings.DEFAULT_REPS

    def __post_init__(self):
        for name in INTEGER_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} は整数である必要があります: {value!r}")
        for name in REAL_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
                raise ConfigError(f"{name} は数値である必要があります: {value!r}")
        if self.n_genes < 1:
            raise ConfigError(f"n_genes は 1 以上である必要があります: {self.n_genes}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma は [0, 1) の範囲である必要があります: {self.gamma}")
        if not (math.isfinite(self.tau) and self.tau >= 0):
            raise ConfigError(f"tau は 0 以上である必要があります: {self.tau}")
        if self.noise not in NOISE_FAMILIES:
            raise ConfigError(f"不明なノイズ分布です: {self.noise}")
        if self.variance_source not in VARIANCE_SOURCES:
            raise ConfigError(f"不明な分散の生成元です: {self.variance_source}")
        if self.variance_source == "empirical" and not self.variance_file:
            raise ConfigError("variance_source=empirical には variance_file が必要です")
        if self.variance_source == "constant" and not self.variance_value > 0:
            raise ConfigError(f"variance_value は正である必要があります: {self.variance_value}")
        if self.design not in SCENARIO_DESIGNS:
            raise ConfigError(f"不明なデザインです: {self.design}")
        if self.m1 < 2 or (self.design in ("two_sample_pooled", "welch") and self.m0 < 2):
            raise ConfigError(f"各群に 2 反復以上が必要です: m1={self.m1}, m0={self.m0}")
        if self.design == "paired" and self.m0 != self.m1:
            raise ConfigError(f"paired デザインでは m1 と m0 が等しい必要があります: {self.m1} != {self.m0}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed は 64 ビットの非負整数である必要があります: {self.seed}")
        if self.reps < 1:
            raise ConfigError(f"reps は 1 以上である必要があります: {self.reps}")

    @property
    def n_nonnull(self) -> int:
        """非 null の遺伝子数 ⌊γN⌋"""
        return int(math.floor(self.gamma * self.n_genes + 1e-9))

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "ScenarioConfig":
        """辞書から設定を作成する（未知のキーはエラー）"""
        if not isinstance(data, dict):
            raise ConfigError("scenario はオブジェクトである必要があります")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"scenario に不明なキーがあります: {unknown}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"scenario の値が不正です: {e}") from e


@dataclass(frozen=True)
class ExperimentOptions:
    """実験ドライバーの設定（τ・γ の格子、手法、水準）"""

    taus: Tuple[float, ...] = (0.0, 0.5, 1.0, 2.0)
    gammas: Tuple[float, ...] = (0.01, 0.05)
    methods: Tuple[str, ...] = ("iteb", "tmle", "cm")
    roc_methods: Tuple[str, ...] = ("iteb_test", "t_test")
    alpha1: float = settings.ALPHA1
    alpha2: float = settings.ALPHA2
    oracle_alpha: float = settings.ORACLE_ALPHA

    def to_dict(self):
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}


_LIST_OPTIONS = ("taus", "gammas", "methods", "roc_methods")


def load_simulation_config(path) -> Tuple[ScenarioConfig, ExperimentOptions]:
    """JSON 形式のシミュレーション設定を読み込む

    Parameters
    ----------
    path : str
        設定ファイルのパス（{"scenario": {...}, "taus": [...], ...}）

    Returns
    -------
    tuple of (ScenarioConfig, ExperimentOptions)
        シナリオ設定と実験設定

    Raises
    ------
    ConfigError
        ファイルが読めない、またはスキーマに違反する場合
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"設定ファイルを読み込めません: {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError("設定ファイルのトップレベルはオブジェクトである必要があります")

    known = {f.name for f in fields(ExperimentOptions)} | {"scenario"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"設定ファイルに不明なキーがあります: {unknown}")

    config = ScenarioConfig.from_dict(data.get("scenario", {}))

    options = {}
    for name in _LIST_OPTIONS:
        if name in data:
            if not isinstance(data[name], list) or not data[name]:
                raise ConfigError(f"{name} は空でない配列である必要があります")
            options[name] = tuple(data[name])
    for name in ("alpha1", "alpha2", "oracle_alpha"):
        if name in data:
            value = data[name]
            if not isinstance(value, (int, float)) or not 0 < value <= 1:
                raise ConfigError(f"{name} は (0, 1] の数値である必要があります: {value}")
            options[name] = float(value)

    for tau in options.get("taus", ()):
        if not isinstance(tau, (int, float)) or tau < 0:
            raise ConfigError(f"taus の値は 0 以上である必要があります: {tau}")
    for gamma in options.get("gammas", ()):
        if not isinstance(gamma, (int, float)) or not 0 <= gamma < 1:
            raise ConfigError(f"gammas の値は [0, 1) である必要があります: {gamma}")

    logger.info(f"シミュレーション設定を読み込みました: {path}")
    return config, ExperimentOptions(**options)


def replication_rng(seed, rep_index) -> np.random.Generator:
    """(seed, rep_index) から反復ごとの独立な乱数生成器を作る"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep_index)]))


@lru_cache(maxsize=8)
def _variance_pool(path) -> np.ndarray:
    if not os.path.exists(path):
        raise ConfigError(f"分散ファイルが見つかりません: {path}", reason="variance_file_missing")
    try:
        frame = pd.read_csv(path, header=None, comment="#", sep=r"\s+")
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame()
    if frame.empty:
        raise ConfigError(f"分散ファイルが空です: {path}", reason="variance_file_empty")
    values = pd.to_numeric(frame.iloc[:, 0], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise ConfigError(f"分散ファイルには正の数値だけを記載してください: {path}")
    return values / values.mean()


def load_variance_file(path) -> np.ndarray:
    """1 列の分散ファイルを読み込み、平均 1 に正規化した配列を返す"""
    return _variance_pool(os.path.abspath(path)).copy()


def draw_variances(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """遺伝子ごとの分散 σ²ᵢ を生成する"""
    n = config.n_genes
    if config.variance_source == "chisq1":
        variances = rng.chisquare(1.0, size=n)
        return variances / variances.mean()
    if config.variance_source == "empirical":
        pool = _variance_pool(os.path.abspath(config.variance_file))
        return rng.choice(pool, size=n, replace=True)
    return np.full(n, float(config.variance_value))


def draw_effects(config: ScenarioConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """真の効果 μᵢ と非 null のラベルを生成する

    非 null は先頭の ⌊γN⌋ 遺伝子で、そのうち先頭 ⌈n₁/2⌉ 個が正、残りが負です。
    """
    n, n1 = config.n_genes, config.n_nonnull
    is_nonnull = np.zeros(n, dtype=bool)
    is_nonnull[:n1] = True

    mu = np.empty(n, dtype=float)
    magnitudes = rng.uniform(1.0, max(3.0, 10.0 * config.tau), size=n1)
    signs = np.where(np.arange(n1) < math.ceil(n1 / 2), 1.0, -1.0)
    mu[:n1] = signs * magnitudes
    mu[n1:] = rng.normal(0.0, config.tau, size=n - n1)
    return mu, is_nonnull


def draw_noise(config: ScenarioConfig, rng: np.random.Generator, sigma: np.ndarray, n_cols: int) -> np.ndarray:
    """分散 σ²ᵢ のノイズを N × n_cols で生成する（ラプラスは尺度 σ/√2）"""
    scale = np.repeat(sigma[:, None], n_cols, axis=1)
    if config.noise == "laplacian":
        return rng.laplace(0.0, scale / math.sqrt(2.0))
    return rng.normal(0.0, scale)


@dataclass(frozen=True)
class Scenario:
    """1 回分の合成データと真値"""

    matrix: ReplicateMatrix
    is_nonnull: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    design: str
    tau2: float = field(default=0.0)

    def summaries(self) -> SummaryTable:
        return summarize_table(self.matrix, self.design)


def _gene_ids(n):
    width = len(str(n))
    return [f"g{i + 1:0{width}d}" for i in range(n)]


def gen_scenario(config: ScenarioConfig, rep_index: int) -> Scenario:
    """設定と反復番号から合成データを生成する

    Parameters
    ----------
    config : ScenarioConfig
        シナリオ設定
    rep_index : int
        反復番号（乱数ストリームの選択に使用）

    Returns
    -------
    Scenario
        測定値行列・非 null ラベル・真の μᵢ・真の σ²ᵢ
    """
    rng = replication_rng(config.seed, rep_index)
    sigma2 = draw_variances(config, rng)
    mu, is_nonnull = draw_effects(config, rng)
    sigma = np.sqrt(sigma2)

    if config.design == "one_sample":
        values = mu[:, None] + draw_noise(config, rng, sigma, config.m1)
        columns = [f"d{j + 1}" for j in range(config.m1)]
        groups = (DIFFERENCE,) * config.m1
        batches = None
    else:
        experiment = mu[:, None] + draw_noise(config, rng, sigma, config.m1)
        control = draw_noise(config, rng, sigma, config.m0)
        values = np.hstack([experiment, control])
        columns = [f"e{j + 1}" for j in range(config.m1)] + [f"c{j + 1}" for j in range(config.m0)]
        groups = (EXPERIMENT,) * config.m1 + (CONTROL,) * config.m0
        if config.design == "paired":
            batches = tuple(f"p{j + 1}" for j in range(config.m1)) * 2
        else:
            batches = None

    frame = pd.DataFrame(values, index=_gene_ids(config.n_genes), columns=columns)
    matrix = ReplicateMatrix(values=frame, groups=groups, batches=batches)
    return Scenario(
        matrix=matrix,
        is_nonnull=is_nonnull,
        mu=mu,
        sigma2=sigma2,
        design=DESIGN_ALIASES[config.design],
        tau2=config.tau**2,
    )

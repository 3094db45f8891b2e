"""
nullspread の基本設定ファイル（システム固有設定）

このモジュールは基本的に編集することはありません
"""

import os
from pathlib import Path

# ディレクトリ設定
BASE_DIR = Path(__file__).parent.parent
RESULTS_DIR = os.path.join(BASE_DIR, "results")

# 環境変数名
THREADS_ENV_NAME = "NULLSPREAD_THREADS"

# 特殊関数の設定
BETA_MAX_ITER = 200  # 連分数の反復上限の基本値
BETA_SHAPE_ITER_SCALE = 4.0  # 反復上限に 4·√max(a, b) を加える
BETA_EPS = 1e-14  # 連分数の収束判定
DF_CAP = 1e7  # これを超える自由度は正規近似に切り替える
QUANTILE_MAX_ITER = 100  # 分位点の二分法反復上限

# 黄金分割探索の設定
GOLDEN_MAX_ITER = 200

# 出力ファイル名
SUMMARY_TSV = "summary.tsv"
ESTIMATE_JSON = "estimate.json"
TEST_CSV = "test_results.csv"
ROC_CSV = "roc_curve.csv"
TAU_ERROR_CSV = "tau_error.csv"
FDR_POWER_CSV = "fdr_power.csv"
MANIFEST_SUFFIX = ".manifest.json"

# ソフトウェアバージョン（マニフェストに記録）
SOFTWARE_VERSION = "0.1.0"

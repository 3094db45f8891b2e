"""
nullspread のユーザー設定ファイル
"""

import os

from dotenv import load_dotenv

from config import base_settings

# 環境変数のロード
load_dotenv()

# ITEB の既定値（δ は遺伝子数 N から √(8/N) として決まる）
ALPHA1 = 0.1
ALPHA2 = 0.01

# 切断 MLE / セントラルマッチングの設定
LEAVE_OUT = 0.2
TMLE_TOL = 1e-6
TMLE_MAX_OUTER = 50
TMLE_INNER_TOL = 1e-8
CM_BINS = 120
CM_GRID_TOL = 1e-6

# 検定の設定
ORACLE_ALPHA = 0.01

# シミュレーション設定
DEFAULT_SEED = 20240620
DEFAULT_REPS = 20


def default_threads():
    """既定のスレッド数を環境変数から取得する

    Returns
    -------
    int
        1 以上のスレッド数（未設定・不正値の場合は 1）
    """
    raw = os.getenv(base_settings.THREADS_ENV_NAME)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1

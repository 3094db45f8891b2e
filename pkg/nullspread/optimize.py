"""
一次元の数値探索ルーチン

黄金分割探索（最小化）と二分法（根の探索）を、遺伝子ごとに独立な
多数の問題へ同時に適用できるよう numpy 配列でベクトル化して提供します。
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from config import base_settings

# ロガーの設定
logger = logging.getLogger(__name__)

# 黄金比の逆数 (約 0.618)
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GoldenResult:
    """黄金分割探索の結果"""

    argmin: np.ndarray
    minimum: np.ndarray
    iterations: int
    converged: bool


def golden_section_minimize(func, lower, upper, tol=1e-8, max_iter=None):
    """黄金分割探索で単峰関数の最小点を求める

    すべての要素で同じ反復を行い、区間幅が tol 以下になった時点で終了します。
    区間の両端点も候補に含めるため、境界での最小値も取りこぼしません。

    Parameters
    ----------
    func : callable
        配列を受け取り同じ形状の配列を返す目的関数
    lower : float or numpy.ndarray
        探索区間の下端
    upper : float or numpy.ndarray
        探索区間の上端
    tol : float, optional
        区間幅の許容値（絶対値）
    max_iter : int, optional
        反復回数の上限（デフォルト: base_settings.GOLDEN_MAX_ITER）

    Returns
    -------
    GoldenResult
        最小点・最小値・反復回数・収束フラグ
    """
    if max_iter is None:
        max_iter = base_settings.GOLDEN_MAX_ITER

    lower, upper = np.broadcast_arrays(
        np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    )
    lower = lower.copy()
    upper = upper.copy()

    f_lower = np.asarray(func(lower), dtype=float)
    f_upper = np.asarray(func(upper), dtype=float)
    lower0, upper0 = lower.copy(), upper.copy()

    x1 = upper - INV_PHI * (upper - lower)
    x2 = lower + INV_PHI * (upper - lower)
    f1 = np.asarray(func(x1), dtype=float)
    f2 = np.asarray(func(x2), dtype=float)

    iteration = 0
    converged = False
    while iteration < max_iter:
        if np.all(upper - lower <= tol):
            converged = True
            break
        iteration += 1

        # 最小点は [lower, x2] 側にある
        left = f1 < f2
        upper = np.where(left, x2, upper)
        lower = np.where(left, lower, x1)

        x_new = np.where(
            left, upper - INV_PHI * (upper - lower), lower + INV_PHI * (upper - lower)
        )
        f_new = np.asarray(func(x_new), dtype=float)

        x1, f1, x2, f2 = (
            np.where(left, x_new, x2),
            np.where(left, f_new, f2),
            np.where(left, x1, x_new),
            np.where(left, f1, f_new),
        )

    if not converged:
        logger.debug(f"黄金分割探索が {max_iter} 回で収束しませんでした")

    best_x = np.where(f1 < f2, x1, x2)
    best_f = np.minimum(f1, f2)

    # 端点の方が小さい場合は端点を採用
    use_lower = f_lower < best_f
    best_x = np.where(use_lower, lower0, best_x)
    best_f = np.where(use_lower, f_lower, best_f)
    use_upper = f_upper < best_f
    best_x = np.where(use_upper, upper0, best_x)
    best_f = np.where(use_upper, f_upper, best_f)

    return GoldenResult(argmin=best_x, minimum=best_f, iterations=iteration, converged=converged)


def bisect_decreasing(func, lower, upper, tol=0.0, max_iter=100):
    """二分法で減少関数の符号変化点を求める

    func(lower) > 0 >= func(upper) を満たす区間を半分ずつ狭めます。
    tol が 0 の場合は浮動小数点の分解能まで（または max_iter 回まで）続けます。

    Parameters
    ----------
    func : callable
        配列を受け取り同じ形状の配列を返す関数
    lower : float or numpy.ndarray
        正側の端点
    upper : float or numpy.ndarray
        非正側の端点
    tol : float, optional
        区間幅の許容値
    max_iter : int, optional
        反復回数の上限

    Returns
    -------
    numpy.ndarray
        符号変化点の近似値（区間の中点）
    """
    lo, hi = np.broadcast_arrays(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
    lo = lo.copy()
    hi = hi.copy()

    for _ in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        if np.all((mid <= lo) | (mid >= hi)):
            break
        positive = np.asarray(func(mid)) > 0
        lo = np.where(positive, mid, lo)
        hi = np.where(positive, hi, mid)

    return 0.5 * (lo + hi)

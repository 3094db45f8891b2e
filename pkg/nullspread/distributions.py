"""
特殊関数と null 分布の裾確率

このモジュールは正則化不完全ベータ関数を土台に、正規分布・t 分布・F 分布の
上側確率と、Welch 統計量の二乗に対する null の裾確率 F̃ᵢ を提供します。
F̃ᵢ は Satterthwaite 近似により F(1, df) 分布で評価します。

関数:
    reg_inc_beta: 正則化不完全ベータ関数
    normal_sf / student_t_sf / f_sf: 各分布の上側確率
    null_sf / null_quantile: null の裾確率とその逆関数
    null_sf_mc_oracle: 検証用のモンテカルロ推定
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from config import base_settings
from nullspread.errors import DomainError
from nullspread.optimize import bisect_decreasing

# ロガーの設定
logger = logging.getLogger(__name__)

# Lentz 法でゼロ除算を避けるための下限
_FPMIN = 1e-300

# p 値の下限（(0, 1] に収めるため）
TINY_PROBABILITY = np.finfo(float).tiny


@dataclass(frozen=True)
class NullTailParams:
    """null の裾確率を評価するためのパラメータ

    Attributes
    ----------
    sigma2_hat : float
        効果量の分散推定値 σ̂²
    tau2 : float
        null 効果の広がり τ²
    df_sigma : float
        σ̂² の自由度（実数でよい）
    """

    sigma2_hat: float
    tau2: float
    df_sigma: float

    def __post_init__(self):
        if not self.sigma2_hat >= 0:
            raise DomainError(f"sigma2_hat は 0 以上である必要があります: {self.sigma2_hat}")
        if not self.tau2 >= 0:
            raise DomainError(f"tau2 は 0 以上である必要があります: {self.tau2}")
        if not self.df_sigma > 0:
            raise DomainError(f"df_sigma は正である必要があります: {self.df_sigma}")

    @property
    def effective_df(self):
        """Satterthwaite 近似の有効自由度 (τ²/σ̂² + 1)² · df_sigma"""
        return float(_effective_df(self.sigma2_hat, self.tau2, self.df_sigma))


def _as_result(value, *inputs):
    """入力がすべてスカラーなら float を、そうでなければ配列を返す"""
    if all(np.ndim(item) == 0 for item in inputs):
        return float(value)
    return value


def _guard(value):
    """Lentz 法の分母がゼロに近い要素を _FPMIN に置き換える"""
    return np.where(np.abs(value) < _FPMIN, _FPMIN, value)


def _iteration_budget(a, b):
    """要素ごとの反復上限。形状パラメータが大きいほど √max(a, b) に比例して増やす"""
    extra = np.ceil(base_settings.BETA_SHAPE_ITER_SCALE * np.sqrt(np.maximum(a, b)))
    return base_settings.BETA_MAX_ITER + extra.astype(int)


def _beta_continued_fraction(a, b, x):
    """不完全ベータ関数の連分数部分を修正 Lentz 法で評価する（1 次元配列版）

    収束していない要素だけを更新し、要素ごとの反復上限に達したものは打ち切ります。
    """
    h = np.empty_like(x)
    if x.size == 0:
        return h

    budget = _iteration_budget(a, b)
    c = np.ones_like(x)
    d = 1.0 / _guard(1.0 - (a + b) * x / (a + 1.0))
    h[:] = d

    active = np.ones(x.shape, dtype=bool)
    exhausted = np.zeros(x.shape, dtype=bool)
    with np.errstate(all="ignore"):
        for m in range(1, int(budget.max()) + 1):
            idx = np.flatnonzero(active)
            ai, bi, xi = a[idx], b[idx], x[idx]
            ci, di = c[idx], d[idx]
            m2 = 2 * m

            # 偶数項
            aa = m * (bi - m) * xi / ((ai - 1.0 + m2) * (ai + m2))
            di = 1.0 / _guard(1.0 + aa * di)
            ci = _guard(1.0 + aa / ci)
            step = di * ci

            # 奇数項
            aa = -(ai + m) * (ai + bi + m) * xi / ((ai + m2) * (ai + 1.0 + m2))
            di = 1.0 / _guard(1.0 + aa * di)
            ci = _guard(1.0 + aa / ci)
            delta = di * ci

            h[idx] *= step * delta
            c[idx], d[idx] = ci, di

            converged = np.abs(delta - 1.0) < base_settings.BETA_EPS
            out_of_budget = ~converged & (budget[idx] <= m)
            exhausted[idx[out_of_budget]] = True
            active[idx[converged | out_of_budget]] = False
            if not active.any():
                break

    if exhausted.any():
        logger.warning(
            f"不完全ベータ関数の連分数が反復上限内で収束しませんでした（{int(exhausted.sum())} 要素、"
            f"上限 {int(budget[exhausted].max())} 回）"
        )
    return h


def reg_inc_beta(a, b, x):
    """正則化不完全ベータ関数 Iₓ(a, b) を計算する

    x > (a+1)/(a+b+2) では対称性 Iₓ(a,b) = 1 − I₁₋ₓ(b,a) を使って
    連分数の収束を保ちます。

    Parameters
    ----------
    a : float or array_like
        形状パラメータ (> 0)
    b : float or array_like
        形状パラメータ (> 0)
    x : float or array_like
        評価点 (0 ≤ x ≤ 1)

    Returns
    -------
    float or numpy.ndarray
        Iₓ(a, b)

    Raises
    ------
    DomainError
        引数が定義域外の場合
    """
    a_arr, b_arr, x_arr = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(x, dtype=float)
    )
    if not (np.all(a_arr > 0) and np.all(b_arr > 0)):
        raise DomainError("reg_inc_beta: a, b は正である必要があります")
    if not np.all((x_arr >= 0) & (x_arr <= 1)):
        raise DomainError("reg_inc_beta: x は [0, 1] の範囲である必要があります")

    result = _reg_inc_beta(a_arr, b_arr, x_arr, 1.0 - x_arr)
    return _as_result(result, a, b, x)


def _reg_inc_beta(a, b, x, y):
    """Iₓ(a, b) の本体。y = 1 − x は呼び出し側で桁落ちなく計算して渡す

    x ≤ (a+1)/(a+b+2) では Iₓ(a, b) を連分数で直接求め、それ以外では 1 − I_y(b, a) とします。
    切り替え点は分布の中心付近にあるので、小さな裾確率は常に直接側で計算されます。
    """
    result = np.where(y <= 0.0, 1.0, 0.0)
    interior = (x > 0) & (y > 0)
    if not interior.any():
        return result

    ai, bi, xi, yi = a[interior], b[interior], x[interior], y[interior]
    log_x = np.where(xi > 0.5, np.log1p(-yi), np.log(xi))
    log_y = np.where(yi > 0.5, np.log1p(-xi), np.log(yi))
    front = np.exp(ai * log_x + bi * log_y - special.betaln(ai, bi))

    swap = xi > (ai + 1.0) / (ai + bi + 2.0)
    direct = ~swap

    values = np.empty_like(xi)
    lower = _beta_continued_fraction(ai[direct], bi[direct], xi[direct])
    upper = _beta_continued_fraction(bi[swap], ai[swap], yi[swap])
    values[direct] = front[direct] * lower / ai[direct]
    values[swap] = 1.0 - front[swap] * upper / bi[swap]
    result[interior] = np.clip(values, 0.0, 1.0)
    return result


def _beta_arguments(ratio):
    """比 r から x = 1/(1+r) と 1 − x = 1/(1+1/r) をそれぞれ直接計算する"""
    with np.errstate(divide="ignore", over="ignore"):
        x = 1.0 / (1.0 + ratio)
        y = 1.0 / (1.0 + 1.0 / ratio)
    return x, y


def normal_sf(z):
    """標準正規分布の上側確率 Φ̃(z)

    Parameters
    ----------
    z : float or array_like
        評価点

    Returns
    -------
    float or numpy.ndarray
        P(Z > z)
    """
    z_arr = np.asarray(z, dtype=float)
    return _as_result(0.5 * special.erfc(z_arr / np.sqrt(2.0)), z)


def student_t_sf(t, nu):
    """t 分布の上側確率

    Parameters
    ----------
    t : float or array_like
        評価点
    nu : float or array_like
        自由度 (> 0、実数でよい)

    Returns
    -------
    float or numpy.ndarray
        P(T > t)

    Raises
    ------
    DomainError
        自由度が正でない場合
    """
    t_arr, nu_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(nu, dtype=float))
    if not np.all(nu_arr > 0):
        raise DomainError("student_t_sf: 自由度は正である必要があります")

    with np.errstate(over="ignore"):
        x, y = _beta_arguments(t_arr * t_arr / nu_arr)
    # P(|T| > |t|) / 2
    half_tail = 0.5 * _reg_inc_beta(0.5 * nu_arr, np.full(nu_arr.shape, 0.5), x, y)
    result = np.where(t_arr >= 0, half_tail, 1.0 - half_tail)
    return _as_result(result, t, nu)


def f_sf(x, d1, d2):
    """F 分布の上側確率

    d1 = 1 のとき f_sf(t², 1, ν) は 2·student_t_sf(|t|, ν) と同じ計算になります。

    Parameters
    ----------
    x : float or array_like
        評価点 (≥ 0)
    d1 : float or array_like
        分子の自由度 (> 0)
    d2 : float or array_like
        分母の自由度 (> 0)

    Returns
    -------
    float or numpy.ndarray
        P(F > x)

    Raises
    ------
    DomainError
        x が負、または自由度が正でない場合
    """
    x_arr, d1_arr, d2_arr = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(d1, dtype=float), np.asarray(d2, dtype=float)
    )
    if not np.all(x_arr >= 0):
        raise DomainError("f_sf: x は 0 以上である必要があります")
    if not (np.all(d1_arr > 0) and np.all(d2_arr > 0)):
        raise DomainError("f_sf: 自由度は正である必要があります")

    with np.errstate(over="ignore"):
        z, w = _beta_arguments(d1_arr * x_arr / d2_arr)
    result = _reg_inc_beta(0.5 * d2_arr, 0.5 * d1_arr, z, w)
    return _as_result(result, x, d1, d2)


def _effective_df(sigma2_hat, tau2, df_sigma):
    """Satterthwaite 近似の有効自由度（σ̂² = 0 の場合は無限大）"""
    sigma2_hat = np.asarray(sigma2_hat, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        df = (tau2 / sigma2_hat + 1.0) ** 2 * df_sigma
    return np.where(sigma2_hat > 0, df, np.inf)


def null_sf_values(t, sigma2_hat, tau2, df_sigma):
    """null の裾確率 F̃ᵢ(t) を配列でまとめて評価する

    Parameters
    ----------
    t : array_like
        統計量 x̄²/(τ² + σ̂²) の値 (≥ 0)
    sigma2_hat : array_like
        分散推定値 σ̂² (≥ 0)
    tau2 : float or array_like
        null の広がり τ² (≥ 0)
    df_sigma : array_like
        σ̂² の自由度 (> 0)

    Returns
    -------
    numpy.ndarray
        (0, 1] に収まる裾確率

    Raises
    ------
    DomainError
        引数が定義域外の場合
    """
    t, sigma2_hat, tau2, df_sigma = np.broadcast_arrays(
        np.asarray(t, dtype=float),
        np.asarray(sigma2_hat, dtype=float),
        np.asarray(tau2, dtype=float),
        np.asarray(df_sigma, dtype=float),
    )
    if not np.all(t >= 0):
        raise DomainError("null_sf: t は 0 以上である必要があります")
    if not (np.all(sigma2_hat >= 0) and np.all(tau2 >= 0)):
        raise DomainError("null_sf: sigma2_hat と tau2 は 0 以上である必要があります")
    if not np.all(df_sigma > 0):
        raise DomainError("null_sf: df_sigma は正である必要があります")
    if np.any((sigma2_hat == 0) & (tau2 == 0) & (t > 0)):
        raise DomainError("null_sf: sigma2_hat と tau2 が両方 0 の場合は t > 0 を評価できません")

    df = _effective_df(sigma2_hat, tau2, df_sigma)
    use_normal = df > base_settings.DF_CAP

    result = np.empty(t.shape, dtype=float)
    if use_normal.any():
        result[use_normal] = 2.0 * np.asarray(normal_sf(np.sqrt(t[use_normal])))
    finite = ~use_normal
    if finite.any():
        result[finite] = np.asarray(f_sf(t[finite], 1.0, df[finite]))

    return np.clip(result, TINY_PROBABILITY, 1.0)


def null_sf(t, params):
    """null の裾確率 F̃ᵢ(t) ≈ P(F(1, df) > t) を計算する

    df = (τ²/σ̂² + 1)² · df_sigma です。df が base_settings.DF_CAP を超える場合は
    正規極限 2·Φ̃(√t) を使います。

    Parameters
    ----------
    t : float or array_like
        評価点 (≥ 0)
    params : NullTailParams
        σ̂²、τ²、自由度

    Returns
    -------
    float or numpy.ndarray
        (0, 1] の裾確率
    """
    values = null_sf_values(t, params.sigma2_hat, params.tau2, params.df_sigma)
    return _as_result(values, t)


def null_quantile_values(p, sigma2_hat, tau2, df_sigma):
    """null_sf の逆関数を配列でまとめて評価する

    √t を変数として区間を倍々に広げて挟み込み、二分法で解きます。

    Parameters
    ----------
    p : array_like
        上側確率 (0 < p ≤ 1)
    sigma2_hat, tau2, df_sigma : array_like
        null_sf_values と同じ

    Returns
    -------
    numpy.ndarray
        null_sf(t) = p となる t (≥ 0)

    Raises
    ------
    DomainError
        p が (0, 1] の範囲外の場合
    """
    p, sigma2_hat, tau2, df_sigma = np.broadcast_arrays(
        np.asarray(p, dtype=float),
        np.asarray(sigma2_hat, dtype=float),
        np.asarray(tau2, dtype=float),
        np.asarray(df_sigma, dtype=float),
    )
    if not np.all((p > 0) & (p <= 1)):
        raise DomainError("null_quantile: p は (0, 1] の範囲である必要があります")
    if np.any((sigma2_hat == 0) & (tau2 == 0)):
        raise DomainError("null_quantile: sigma2_hat と tau2 が両方 0 です")

    def excess(u):
        return null_sf_values(u * u, sigma2_hat, tau2, df_sigma) - p

    # 上端を倍々に広げて挟み込む
    upper = np.ones(p.shape, dtype=float)
    for _ in range(1000):
        above = excess(upper) > 0
        if not above.any():
            break
        upper = np.where(above, upper * 2.0, upper)

    root = bisect_decreasing(
        excess, np.zeros(p.shape), upper, tol=0.0, max_iter=base_settings.QUANTILE_MAX_ITER
    )
    return np.where(p >= 1.0, 0.0, root * root)


def null_quantile(p, params):
    """null_sf(t, params) = p となる t を求める

    Parameters
    ----------
    p : float or array_like
        上側確率 (0 < p ≤ 1)
    params : NullTailParams
        σ̂²、τ²、自由度

    Returns
    -------
    float or numpy.ndarray
        分位点 t (≥ 0)。p = 1 のとき 0
    """
    values = null_quantile_values(p, params.sigma2_hat, params.tau2, params.df_sigma)
    return _as_result(values, p)


@dataclass(frozen=True)
class MonteCarloEstimate:
    """モンテカルロ推定値とその標準誤差"""

    estimate: float
    standard_error: float
    n_draws: int


def null_sf_mc_oracle(t, sigma2, tau2, df_sigma, n_draws=10**6, seed=0, chunk_size=250_000):
    """Welch 統計量の二乗の裾確率をモンテカルロで推定する

    x̄ ∼ N(0, τ² + σ²)、σ̂² ∼ σ²·χ²_df/df を独立に発生させ、
    x̄²/(τ² + σ̂²) ≥ t となる割合を返します。

    Parameters
    ----------
    t : float
        評価点 (≥ 0)
    sigma2 : float
        真の分散 σ²
    tau2 : float
        null の広がり τ²
    df_sigma : float
        σ̂² の自由度
    n_draws : int, optional
        乱数の発生数 (≥ 10⁴)
    seed : int, optional
        乱数シード
    chunk_size : int, optional
        一度に発生させる乱数の数

    Returns
    -------
    MonteCarloEstimate
        推定値と標準誤差

    Raises
    ------
    DomainError
        引数が定義域外の場合
    """
    if n_draws < 10**4:
        raise DomainError(f"n_draws は 10⁴ 以上である必要があります: {n_draws}")
    if t < 0 or sigma2 < 0 or tau2 < 0 or df_sigma <= 0:
        raise DomainError("null_sf_mc_oracle: 引数が定義域外です")
    if sigma2 + tau2 <= 0:
        raise DomainError("null_sf_mc_oracle: sigma2 と tau2 が両方 0 です")

    rng = np.random.default_rng(seed)
    hits = 0
    remaining = int(n_draws)
    while remaining > 0:
        size = min(chunk_size, remaining)
        xbar = rng.normal(0.0, np.sqrt(tau2 + sigma2), size)
        s2 = sigma2 * rng.chisquare(df_sigma, size) / df_sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = xbar * xbar / (tau2 + s2)
        hits += int(np.count_nonzero(stat >= t))
        remaining -= size

    estimate = hits / n_draws
    standard_error = float(np.sqrt(estimate * (1.0 - estimate) / n_draws))
    logger.debug(f"MC 推定: t={t}, 推定値={estimate:.6f}, 標準誤差={standard_error:.2e}")
    return MonteCarloEstimate(estimate=estimate, standard_error=standard_error, n_draws=int(n_draws))

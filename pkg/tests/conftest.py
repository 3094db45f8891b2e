"""テスト共通のフィクスチャ"""

import numpy as np
import pytest

from collector.summaries import SummaryTable


def make_table(xbar, s2, df=4.0, prefix="g"):
    xbar = np.asarray(xbar, dtype=float)
    ids = [f"{prefix}{i}" for i in range(xbar.size)]
    return SummaryTable.from_arrays(ids, xbar, np.broadcast_to(np.asarray(s2, dtype=float), xbar.shape), df)


def null_table(n, tau2, sigma2=1.0, df=8.0, seed=0, n_signal=0, signal=8.0):
    """x̄ ∼ N(0, τ² + σ²)、s2 ∼ σ²χ²_df/df の null データ（先頭 n_signal 個は信号）"""
    rng = np.random.default_rng(seed)
    xbar = rng.normal(0.0, np.sqrt(tau2 + sigma2), size=n)
    xbar[:n_signal] += signal * np.where(np.arange(n_signal) % 2 == 0, 1.0, -1.0)
    s2 = sigma2 * rng.chisquare(df, size=n) / df
    return make_table(xbar, s2, df)


@pytest.fixture
def write_text(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write


@pytest.fixture
def paired_matrix_tsv(write_text):
    return write_text(
        "paired.tsv",
        "gene_id\ts1:experiment:b1\ts2:experiment:b2\ts3:experiment:b3\t"
        "c1:control:b1\tc2:control:b2\tc3:control:b3\n"
        "g1\t5.0\t6.0\t7.0\t4.0\t4.5\t5.0\n"
        "g2\t2.0\t2.5\t1.5\t2.0\t2.0\t2.0\n"
        "g3\t9.0\t8.0\t10.0\t3.0\t2.0\t4.0\n",
    )


@pytest.fixture
def summary_tsv(write_text):
    rows = ["gene_id\txbar\ts2\tdf"]
    rng = np.random.default_rng(7)
    for i in range(200):
        xbar = rng.normal(0.0, 1.2) + (6.0 if i < 10 else 0.0)
        s2 = rng.chisquare(8) / 8
        rows.append(f"gene{i}\t{xbar!r}\t{s2!r}\t8")
    return write_text("summary.tsv", "\n".join(rows) + "\n")

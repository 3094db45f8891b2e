"""
結果ファイルと実行マニフェストの保存

出力はすべて一時ファイルに書き込んでから置き換えるため、途中で中断しても
壊れたファイルは残りません。各出力には同名の .manifest.json が付きます。
"""

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import pandas as pd

from config import base_settings

# ロガーの設定
logger = logging.getLogger(__name__)


def atomic_write_text(path, text):
    """テキストを一時ファイル経由で path に書き込む"""
    directory = os.path.dirname(os.path.abspath(path))
    # ディレクトリが存在しなければ作成
    os.makedirs(directory, exist_ok=True)

    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_frame(df: pd.DataFrame, path, sep=","):
    """DataFrame を CSV / TSV として保存する（浮動小数点は往復可能な表記）"""
    text = df.to_csv(sep=sep, index=False, lineterminator="\n")
    atomic_write_text(path, text)
    logger.info(f"データを{path}に保存しました（{len(df)}件）")


def write_json(data, path):
    """辞書を JSON として保存する"""
    text = json.dumps(data, ensure_ascii=False, indent=2, allow_nan=False) + "\n"
    atomic_write_text(path, text)
    logger.info(f"データを{path}に保存しました")


def file_digest(path):
    """ファイルの SHA-256 ダイジェストを返す"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(output_path):
    return f"{output_path}{base_settings.MANIFEST_SUFFIX}"


@dataclass
class RunManifest:
    """実行マニフェスト

    Attributes
    ----------
    command : str
        サブコマンド名
    config : dict
        実行時の設定（既定値の解決後）
    seed : int, optional
        乱数シード
    inputs : dict
        入力ファイルパス → SHA-256
    outputs : list of str
        出力ファイルのパス
    timings : dict
        処理ごとの所要時間（秒）
    """

    command: str
    config: Dict[str, Any]
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    software_version: str = base_settings.SOFTWARE_VERSION

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def to_dict(self):
        return asdict(self)

    def write(self, output_path):
        """output_path に対応するマニフェストを保存する"""
        if str(output_path) not in self.outputs:
            self.outputs.append(str(output_path))
        path = manifest_path(output_path)
        write_json(self.to_dict(), path)
        return path

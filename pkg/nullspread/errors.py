"""
nullspread で使用する例外クラス

各例外は機械可読な理由コード (reason) とコマンドラインの終了コード (exit_code) を持ちます。
"""


class NullSpreadError(Exception):
    """nullspread の基底例外"""

    reason = "error"
    exit_code = 1

    def __init__(self, message, reason=None):
        super().__init__(message)
        if reason is not None:
            self.reason = reason

    def to_dict(self):
        """エラー内容を JSON 出力用の辞書に変換する

        Returns
        -------
        dict
            reason と message を含む辞書
        """
        return {"error": self.reason, "message": str(self)}


class DomainError(NullSpreadError, ValueError):
    """引数が関数の定義域外の場合"""

    reason = "domain_error"
    exit_code = 2


class InputFormatError(NullSpreadError):
    """入力ファイルの形式が不正な場合"""

    reason = "format_error"
    exit_code = 2

    def __init__(self, message, line=None, reason=None):
        super().__init__(message, reason=reason)
        self.line = line

    def to_dict(self):
        data = super().to_dict()
        if self.line is not None:
            data["line"] = self.line
        return data


class ConfigError(NullSpreadError):
    """シミュレーション設定のスキーマ違反"""

    reason = "config_error"
    exit_code = 2


class DesignError(NullSpreadError):
    """実験デザインの違反（対応のない列、反復数不足など）"""

    reason = "design_error"
    exit_code = 3


class EstimationError(NullSpreadError):
    """τ² の推定に失敗した場合"""

    reason = "estimation_failed"
    exit_code = 4

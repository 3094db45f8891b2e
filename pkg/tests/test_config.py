"""設定モジュールのテスト"""

import os

import pytest

from config import base_settings, settings


class TestBaseSettings:
    def test_directories(self):
        directories = {name for name in vars(base_settings) if name.endswith("_DIR")}
        assert directories == {"BASE_DIR", "RESULTS_DIR"}
        assert os.path.dirname(base_settings.RESULTS_DIR) == str(base_settings.BASE_DIR)

    def test_iteration_caps(self):
        assert base_settings.BETA_MAX_ITER == 200
        assert base_settings.BETA_SHAPE_ITER_SCALE > 0
        assert base_settings.DF_CAP == 1e7


class TestDefaultThreads:
    @pytest.mark.parametrize("raw, expected", [(None, 1), ("3", 3), ("0", 1), ("abc", 1), ("", 1)])
    def test_from_environment(self, monkeypatch, raw, expected):
        if raw is None:
            monkeypatch.delenv(base_settings.THREADS_ENV_NAME, raising=False)
        else:
            monkeypatch.setenv(base_settings.THREADS_ENV_NAME, raw)
        assert settings.default_threads() == expected

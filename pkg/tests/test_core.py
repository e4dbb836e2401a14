import logging
import pytest
import threading
from concurrent.futures import ThreadPoolExecutor
from gammalab.core.exceptions import ConfigError, GammaLabError, InvalidInputError, ZeroTraceError
from gammalab.core.log_utils import (
    check_directory_permissions,
    cleanup_logger_handlers,
    get_format,
    get_level,
    write_stderr,
)
from gammalab.core.operator_cache import get_cached_operator, get_operator_cache_stats
from gammalab.core.settings import get_lab_settings
from gammalab.core.thread_safety import auto_thread_safe


class TestSettings:
    def test_defaults(self):
        settings = get_lab_settings()
        assert settings.min_ball_nodes == 5
        assert settings.alpha_samples == 64
        assert settings.beta_samples == 16
        assert settings.default_eta == 0.25
        assert settings.scan_step == 0.05
        assert settings.workers == 1
        assert settings.gamma_final_gap == 0.05
        assert settings.strip_final_gap == 0.06

    def test_cached(self):
        assert get_lab_settings() is get_lab_settings()

    def test_environment_override(self, env_settings):
        env_settings(workers=4, cg_rtol=1e-6, log_level="DEBUG")
        settings = get_lab_settings()
        assert settings.workers == 4
        assert settings.cg_rtol == 1e-6
        assert settings.log_level == "DEBUG"


class TestOperatorCache:
    def test_builds_once(self):
        calls = []

        def build():
            calls.append(1)
            return object()

        first = get_cached_operator("domain", "laplacian", build)
        assert get_cached_operator("domain", "laplacian", build) is first
        assert len(calls) == 1
        stats = get_operator_cache_stats()
        assert (stats["hits"], stats["misses"], stats["cached_operators"]) == (1, 1, 1)

    def test_evicts_oldest(self, env_settings):
        env_settings(max_cached_operators=2)
        for name in ("a", "b", "c"):
            get_cached_operator("domain", name, object)
        assert get_operator_cache_stats()["cached_operators"] == 2
        get_cached_operator("domain", "a", object)
        assert get_operator_cache_stats()["misses"] == 4

    def test_zero_disables_caching(self, env_settings):
        env_settings(max_cached_operators=0)
        assert get_cached_operator("domain", "a", object) is not get_cached_operator("domain", "a", object)
        assert get_operator_cache_stats()["cached_operators"] == 0


class TestLogUtils:
    @pytest.mark.parametrize(
        "name, level", [("debug", logging.DEBUG), ("WARNING", logging.WARNING), ("nope", logging.INFO)]
    )
    def test_get_level(self, name, level):
        assert get_level(name) == level

    def test_get_level_rejects_non_string(self, capsys):
        assert get_level(10) == logging.INFO
        assert "[ERROR]:Unable to get log level" in capsys.readouterr().err

    def test_write_stderr(self, capsys):
        write_stderr("Unable to run | boom")
        assert capsys.readouterr().err.rstrip().endswith("]:[ERROR]:Unable to run | boom")

    def test_format(self):
        fmt = get_format(True, "gammalab", "UTC")
        assert "[gammalab]:" in fmt
        assert "%(lineno)d" in fmt
        assert "%(filename)s" not in get_format(False, "", "UTC")

    def test_creates_directory(self, tmp_path):
        target = tmp_path / "a" / "b"
        check_directory_permissions(target)
        assert target.is_dir()

    def test_cleanup_accepts_none(self):
        cleanup_logger_handlers(None)
        logger = logging.getLogger("gammalab-cleanup")
        logger.addHandler(logging.NullHandler())
        cleanup_logger_handlers(logger)
        assert logger.handlers == []


class TestThreadSafety:
    def test_wraps_listed_methods(self):
        @auto_thread_safe(["add"])
        class Counter:
            def __init__(self):
                self.value = 0

            def add(self):
                current = self.value
                threading.Event().wait(0.0001)
                self.value = current + 1

            def peek(self):
                return self.value

        assert Counter.add.thread_safe_wrapped
        assert not hasattr(Counter.peek, "thread_safe_wrapped")
        counter = Counter()
        with ThreadPoolExecutor(max_workers=8) as pool:
            for _ in range(200):
                pool.submit(counter.add)
        assert counter.peek() == 200


class TestExceptions:
    def test_hierarchy(self):
        assert issubclass(GammaLabError, ValueError)
        assert issubclass(ZeroTraceError, InvalidInputError)

    def test_config_error_field(self):
        error = ConfigError("Unable to validate config | p", "p")
        assert error.field_path == "p"
        assert isinstance(error, GammaLabError)

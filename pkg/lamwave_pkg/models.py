import time
import logging
import threading
from datetime import datetime
from collections import defaultdict
from contextlib import contextmanager

logger = logging.getLogger(__name__)


class RunStats:
    """Bookkeeping for one cli invocation: stage timings, counters and written artifacts."""

    def __init__(self, config):
        self.config = config
        self.start_time = datetime.now()
        self.stage_seconds = {}
        self.counters = defaultdict(int)
        self.artifacts = []
        self.warnings = []
        self.errors = []
        self.lock = threading.Lock()

    @contextmanager
    def stage(self, name):
        start = time.monotonic()
        try:
            yield
        finally:
            with self.lock:
                self.stage_seconds[name] = self.stage_seconds.get(name, 0.0) + time.monotonic() - start

    def increment(self, key, amount=1):
        with self.lock:
            self.counters[key] += amount

    def add_artifact(self, path):
        with self.lock:
            self.artifacts.append(path)
        return path

    def add_warning(self, warning):
        with self.lock:
            self.warnings.append(warning)

    def add_error(self, error):
        with self.lock:
            self.errors.append(error)

    def get_run_time(self):
        return datetime.now() - self.start_time

    def log_summary(self):
        logger.info(f"📊 Run finished in {self.get_run_time().total_seconds():.1f}s")
        for name, seconds in self.stage_seconds.items():
            logger.info(f"   stage {name}: {seconds:.2f}s")
        if self.counters:
            logger.info("   " + ', '.join(f"{key}={value}" for key, value in sorted(self.counters.items())))
        for path in self.artifacts:
            logger.info(f"   wrote {path}")
        for warning in self.warnings:
            logger.warning(f"⚠️ {warning}")
        for error in self.errors:
            logger.error(f"❌ {error}")

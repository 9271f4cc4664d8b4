"""cProfile around a CLI command body."""
import cProfile
import io
import logging
import pstats
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator

logger = logging.getLogger(__name__)


@dataclass
class ProfileRun:
    label: str
    elapsed: float = 0.0
    stats: str = ''


@contextmanager
def profiled(label: str, limit: int = 20, sort: str = 'cumtime') -> Iterator[ProfileRun]:
    """Profile the block; the yielded ProfileRun is filled in on exit, also when the block raises."""
    run = ProfileRun(label)
    profiler = cProfile.Profile()
    start = time.perf_counter()
    profiler.enable()
    try:
        yield run
    finally:
        profiler.disable()
        run.elapsed = time.perf_counter() - start
        buf = io.StringIO()
        pstats.Stats(profiler, stream=buf).sort_stats(sort).print_stats(limit)
        run.stats = buf.getvalue()
        logger.info("[PROFILE] %s took %.4fs", label, run.elapsed)

"""
Replica farm - runs independent replica jobs on a process pool
"""
import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Optional, Sequence, Tuple

import psutil

from kac.config import ExperimentConfig
from kac.kernels import KernelSpec, RateTable, build_rate_table

logger = logging.getLogger(__name__)


class ReplicaOrchestrator:
    """
    Maps a picklable job function over replica jobs. Results always come back
    in job order, so reductions over them do not depend on the thread count.
    """

    def __init__(self, threads: Optional[int] = None):
        self.threads = threads or psutil.cpu_count(logical=True) or 1

    def pool_map(self, fn: Callable, jobs: Sequence[Any], threads: Optional[int] = None) -> List[Any]:
        """Blocking map; runs inline for a single thread or a single job."""
        threads = threads or self.threads
        jobs = list(jobs)
        if threads <= 1 or len(jobs) <= 1:
            return [fn(job) for job in jobs]
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            return list(pool.map(fn, jobs))

    async def map(self, fn: Callable, jobs: Sequence[Any], threads: Optional[int] = None) -> List[Any]:
        """Run the jobs off the event loop and return their results in order."""
        jobs = list(jobs)
        logger.debug(f"Dispatching {len(jobs)} replica jobs to {threads or self.threads} workers")
        return await asyncio.to_thread(self.pool_map, fn, jobs, threads)

    def mapper(self, threads: Optional[int] = None) -> Callable:
        """A map-like callable bound to this farm, for library functions taking ``mapper``."""
        def bound(fn, jobs):
            return self.pool_map(fn, jobs, threads)
        return bound


def prepare_kernel(cfg: ExperimentConfig) -> Tuple[KernelSpec, RateTable]:
    """Kernel spec plus its rate table, served from KAC_CACHE_DIR when set."""
    spec = cfg.kernel.to_spec()
    table = build_rate_table(spec, knots=cfg.kernel.knots)
    return spec, table


# Global orchestrator instance
replica_orchestrator = ReplicaOrchestrator()

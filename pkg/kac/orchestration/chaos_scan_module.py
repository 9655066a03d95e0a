"""
Chaos scan - distance between two independent particle systems as N grows
"""
import logging
from pathlib import Path
from typing import Any, Dict

from kac.config import ExperimentConfig
from kac.errors import InvariantViolation, KacError
from kac.metrics import EXACT_LIMIT, W_p
from kac.particle import SimConfig, empirical, sample_initial, simulate
from kac.records import write_json
from kac.statistics import mean_and_stderr, nonincreasing_within
from kac.orchestration.replica_module import prepare_kernel, replica_orchestrator

logger = logging.getLogger(__name__)


def _chaos_replica(job) -> Dict[str, Any]:
    spec, table, sim, n, seed, replica = job
    finals = []
    for copy in (2 * replica, 2 * replica + 1):
        state = sample_initial(sim.initial, n, spec.d, seed, r=sim.temperature_ratio, replica=copy)
        traj = simulate(state, spec, table, SimConfig(K=sim.K, t_final=sim.t_final, seed=seed, replica=copy))
        finals.append(empirical(traj.final))
    exact = n <= EXACT_LIMIT
    return {
        "N": n,
        "replica": replica,
        "distance": W_p(finals[0], finals[1], sim.p, exact=exact),
        "self_distance": W_p(finals[0], finals[0], sim.p, exact=exact),
    }


class ChaosScanOrchestrator:
    """
    For each N, compares two independent high-K runs from independent
    samples of the same initial law. Only the decreasing trend is checked.
    """

    async def chaos_scan(self, cfg: ExperimentConfig) -> Dict[str, Any]:
        spec, table = prepare_kernel(cfg)
        sim, ens = cfg.sim, cfg.ensemble
        n_list = list(cfg.experiment.N_list)
        jobs = [(spec, table, sim, n, ens.master_seed, r) for n in n_list for r in range(ens.replicas)]
        results = await replica_orchestrator.map(_chaos_replica, jobs, ens.resolved_threads())
        means, stderrs = [], []
        for n in n_list:
            mean, se = mean_and_stderr([res["distance"] for res in results if res["N"] == n])
            means.append(mean)
            stderrs.append(se)
            logger.info(f"Chaos scan N={n}: E[W_p] = {mean:.6g} +/- {se:.3g}")
        return {
            "N_list": n_list,
            "K": sim.K,
            "p": sim.p,
            "t_final": sim.t_final,
            "replicas": ens.replicas,
            "mean_distance": means,
            "stderr": stderrs,
            "trend_nonincreasing": nonincreasing_within(means, stderrs) if len(n_list) > 1 else None,
            "max_self_distance": max(res["self_distance"] for res in results),
        }

    async def run(self, cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
        try:
            report = await self.chaos_scan(cfg)
            write_json(out_dir / "chaos_scan.json", report)
            return {"status": "success", "report": report}
        except InvariantViolation as e:
            logger.error(f"Invariant violation: {e}")
            return {"status": "violation", "message": str(e), "details": e.details}
        except KacError as e:
            logger.error(f"Chaos scan failed: {e}")
            return {"status": "error", "message": str(e)}


# Global orchestrator instance
chaos_scan_orchestrator = ChaosScanOrchestrator()


async def chaos_scan(cfg: ExperimentConfig):
    return await chaos_scan_orchestrator.chaos_scan(cfg)


async def run_chaos_scan(cfg: ExperimentConfig, out_dir: Path):
    return await chaos_scan_orchestrator.run(cfg, out_dir)

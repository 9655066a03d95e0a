"""
Coupling scan - E[bar d_p^2(T)] of Tanaka-coupled pairs across cutoff levels K
"""
import logging
from pathlib import Path
from typing import Any, Dict, List

from kac.config import ExperimentConfig
from kac.coupling import couple_levels, fit_k_scaling
from kac.errors import InvariantViolation, KacError
from kac.particle import sample_initial
from kac.records import RegressionSummary, write_coupling_csv, write_json
from kac.statistics import mean_and_stderr, nonincreasing_within
from kac.orchestration.replica_module import prepare_kernel, replica_orchestrator

logger = logging.getLogger(__name__)

# scan levels above K'/16 let the fine proxy's own bias show up in the slope
PROXY_MARGIN = 16.0
SLOPE_TOLERANCE = 0.3


def _couple_replica(job) -> Dict[str, Any]:
    spec, table, sim, k_list, p_values, seed, replica = job
    state = sample_initial(sim.initial, sim.N, spec.d, seed, r=sim.temperature_ratio, replica=replica)
    scan = couple_levels(state, k_list, sim.K_prime, spec, table, sim.t_final, seed, dt=sim.dt,
                         replica=replica, p_values=p_values)
    return {
        "replica": replica,
        "times": scan.times,
        "bar_d": scan.bar_d,
        "fine_accepted": scan.fine_accepted,
        "coarse_accepted": dict(zip(scan.levels, scan.coarse_accepted)),
    }


class CoupleScanOrchestrator:
    """Runs coupled pairs for every K in the scan and fits the K-scaling slope."""

    async def run(self, cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
        try:
            spec, table = prepare_kernel(cfg)
            sim, ens, exp = cfg.sim, cfg.ensemble, cfg.experiment
            k_list = [float(K) for K in exp.K_list]
            p_values = tuple(dict.fromkeys([sim.p] + list(exp.p_list)))
            if max(k_list) > sim.K_prime / PROXY_MARGIN:
                logger.warning(f"K_list reaches {max(k_list)} > K'/{PROXY_MARGIN:g}; "
                               f"the fine process is a weak proxy at that level")

            jobs = [(spec, table, sim, k_list, p_values, ens.master_seed, r) for r in range(ens.replicas)]
            results = await replica_orchestrator.map(_couple_replica, jobs, ens.resolved_threads())

            rows: List[tuple] = []
            for K in k_list:
                for res in results:
                    for t, value in zip(res["times"], res["bar_d"][K][sim.p]):
                        rows.append((K, res["replica"], t, value))
            write_coupling_csv(out_dir / "coupling.csv", rows)

            by_p = {}
            for p in p_values:
                means, stderrs = [], []
                for K in k_list:
                    finals = [res["bar_d"][K][p][-1] for res in results]
                    mean, se = mean_and_stderr(finals)
                    means.append(mean)
                    stderrs.append(se)
                entry = {"mean": means, "stderr": stderrs,
                         "nonincreasing_in_K": nonincreasing_within(means, stderrs)}
                if len(k_list) >= 2:
                    slope, intercept, slope_se, n_points = fit_k_scaling(k_list, means)
                    entry["regression"] = RegressionSummary(slope=slope, intercept=intercept, stderr=slope_se,
                                                            n_points=n_points, p=p).model_dump()
                by_p[str(p)] = entry

            target = 1.0 - 1.0 / spec.nu
            report = {
                "K_list": k_list,
                "K_prime": sim.K_prime,
                "N": sim.N,
                "t_final": sim.t_final,
                "replicas": ens.replicas,
                "target_slope": target,
                "by_p": by_p,
                "fine_accepted_mean": mean_and_stderr([r["fine_accepted"] for r in results])[0],
            }
            primary = by_p[str(sim.p)].get("regression")
            if primary is not None:
                write_json(out_dir / "regression.json", primary)
                report["slope_within_tolerance"] = abs(primary["slope"] - target) <= SLOPE_TOLERANCE
                logger.info(f"Coupling scan: slope {primary['slope']:.3f} +/- {primary['stderr']:.3f} "
                            f"(target {target:.3f}) at p={sim.p}")
            write_json(out_dir / "couple_scan.json", report)
            return {"status": "success", "report": report}

        except InvariantViolation as e:
            logger.error(f"Invariant violation: {e}")
            return {"status": "violation", "message": str(e), "details": e.details}
        except KacError as e:
            logger.error(f"Coupling scan failed: {e}")
            return {"status": "error", "message": str(e)}


# Global orchestrator instance
couple_scan_orchestrator = CoupleScanOrchestrator()


async def run_couple_scan(cfg: ExperimentConfig, out_dir: Path):
    return await couple_scan_orchestrator.run(cfg, out_dir)

"""
Equilibration experiment - relaxation of a two-temperature start towards the
Maxwellian fourth moment (d + 2) / d
"""
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from kac.config import ExperimentConfig
from kac.errors import InvariantViolation, KacError
from kac.moments import abs_moment
from kac.particle import InitialDistribution, RecordMode, SimConfig, sample_initial, simulate
from kac.records import write_json, write_table
from kac.statistics import batch_means, mean_and_stderr
from kac.orchestration.replica_module import prepare_kernel, replica_orchestrator

logger = logging.getLogger(__name__)

STANDARD_ERRORS = 5.0


def _equilibrate_replica(job) -> Dict[str, Any]:
    spec, table, sim, seed, replica = job
    state = sample_initial(InitialDistribution.TWO_TEMPERATURE, sim.N, spec.d, seed,
                           r=sim.temperature_ratio, replica=replica)
    cfg = SimConfig(K=sim.K, t_final=sim.t_final, seed=seed, replica=replica,
                    record=RecordMode.TRAJECTORY, dt=sim.dt)
    traj = simulate(state, spec, table, cfg)
    return {"times": traj.times, "fourth": [abs_moment(snap, 4.0) for snap in traj.snapshots]}


class EquilibrateOrchestrator:
    """Time-averaged fourth moment over the late window, against (d + 2) / d."""

    async def run(self, cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
        try:
            spec, table = prepare_kernel(cfg)
            sim, ens = cfg.sim, cfg.ensemble
            window_start = cfg.experiment.window_start
            if window_start is None:
                window_start = 0.5 * sim.t_final
            jobs = [(spec, table, sim, ens.master_seed, r) for r in range(ens.replicas)]
            results = await replica_orchestrator.map(_equilibrate_replica, jobs, ens.resolved_threads())

            times = np.asarray(results[0]["times"])
            curves = np.asarray([res["fourth"] for res in results])
            window = times >= window_start
            if not window.any():
                raise KacError(f"no snapshots in the averaging window [{window_start}, {sim.t_final}]")
            if ens.replicas > 1:
                mean, se = mean_and_stderr(curves[:, window].mean(axis=1))
            else:
                mean, se = batch_means(curves[0, window])
            target = (spec.d + 2.0) / spec.d
            write_table(out_dir / "fourth_moment.csv", ["t", "m4"],
                        np.column_stack([times, curves.mean(axis=0)]))
            report = {
                "N": sim.N,
                "K": sim.K,
                "t_final": sim.t_final,
                "window": [window_start, sim.t_final],
                "replicas": ens.replicas,
                "initial_fourth_moment": float(curves[:, 0].mean()),
                "time_averaged_fourth_moment": mean,
                "stderr": se,
                "target": target,
                "passed": bool(np.isfinite(se) and abs(mean - target) <= STANDARD_ERRORS * se),
            }
            write_json(out_dir / "equilibrate.json", report)
            logger.info(f"Equilibration: <|v|^4> = {mean:.5f} +/- {se:.5f}, target {target:.5f}")
            return {"status": "success", "report": report}

        except InvariantViolation as e:
            logger.error(f"Invariant violation: {e}")
            return {"status": "violation", "message": str(e), "details": e.details}
        except KacError as e:
            logger.error(f"Equilibration experiment failed: {e}")
            return {"status": "error", "message": str(e)}


# Global orchestrator instance
equilibrate_orchestrator = EquilibrateOrchestrator()


async def run_equilibrate(cfg: ExperimentConfig, out_dir: Path):
    return await equilibrate_orchestrator.run(cfg, out_dir)

"""
Conservation experiment - momentum, energy and per-jump moment checks on
plain cutoff runs
"""
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from kac.config import ExperimentConfig
from kac.errors import InvariantViolation, KacError
from kac.moments import lambda_k
from kac.particle import RecordMode, SimConfig, sample_initial, simulate
from kac.records import events_to_records, write_json, write_jsonl, write_moment_csv, write_trajectory_csv
from kac.orchestration.replica_module import prepare_kernel, replica_orchestrator

logger = logging.getLogger(__name__)

MOMENTUM_BUDGET = 1e-9
ENERGY_BUDGET = 1e-9


def _conserve_replica(job) -> Dict[str, Any]:
    spec, table, sim, seed, replica, keep_snapshots, log_events = job
    state = sample_initial(sim.initial, sim.N, spec.d, seed, r=sim.temperature_ratio, replica=replica)
    record = RecordMode.EVENTS if log_events else RecordMode.TRAJECTORY
    cfg = SimConfig(K=sim.K, t_final=sim.t_final, seed=seed, replica=replica,
                    record=record, dt=sim.dt, track_moments=tuple(sim.track_moments))
    traj = simulate(state, spec, table, cfg)
    momentum = [float(np.linalg.norm(snap.sum(axis=0))) for snap in traj.snapshots]
    energy = [abs(float(np.einsum("ij,ij->", snap, snap)) / sim.N - 1.0) for snap in traj.snapshots]
    result = {
        "replica": replica,
        "candidates": traj.candidates,
        "accepted": traj.accepted,
        "max_momentum_drift": max(momentum),
        "max_energy_drift": max(energy),
        "moment_violations": traj.moment_violations,
        "max_jump_ratio": {k: traj.moment_trace.max_ratio(k) for k in sim.track_moments}
        if traj.moment_trace else {},
    }
    if keep_snapshots:
        result["times"] = traj.times
        result["snapshots"] = traj.snapshots
    if log_events:
        result["events"] = events_to_records(traj.events)
    return result


class ConserveOrchestrator:
    """Runs the conservation suite over the replica ensemble."""

    async def run(self, cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
        try:
            spec, table = prepare_kernel(cfg)
            sim, ens = cfg.sim, cfg.ensemble
            log_events = cfg.experiment.event_log
            jobs = [(spec, table, sim, ens.master_seed, r, r == 0, log_events and r == 0)
                    for r in range(ens.replicas)]
            results = await replica_orchestrator.map(_conserve_replica, jobs, ens.resolved_threads())

            first = results[0]
            write_trajectory_csv(out_dir / "trajectory.csv", first["times"], first["snapshots"])
            orders = sorted(set(sim.track_moments) | {2.0})
            write_moment_csv(out_dir / "moments.csv", first["times"],
                             {k: [lambda_k(snap, k) for snap in first["snapshots"]] for k in orders})
            if log_events:
                write_jsonl(out_dir / "events.jsonl", first["events"])

            momentum = max(r["max_momentum_drift"] for r in results)
            energy = max(r["max_energy_drift"] for r in results)
            violations = sum(r["moment_violations"] for r in results)
            report = {
                "N": sim.N,
                "K": sim.K,
                "t_final": sim.t_final,
                "replicas": ens.replicas,
                "events": sum(r["accepted"] for r in results),
                "candidates": sum(r["candidates"] for r in results),
                "max_momentum_drift": momentum,
                "momentum_budget": MOMENTUM_BUDGET * sim.N,
                "max_energy_drift": energy,
                "energy_budget": ENERGY_BUDGET,
                "per_jump_violations": violations,
                "max_jump_ratio": {str(k): max(r["max_jump_ratio"].get(k, 1.0) for r in results)
                                   for k in sim.track_moments},
                "per_jump_bound": {str(k): 2.0 ** (0.5 * k + 1.0) for k in sim.track_moments},
            }
            report["passed"] = (momentum <= MOMENTUM_BUDGET * sim.N and energy <= ENERGY_BUDGET
                                and violations == 0)
            write_json(out_dir / "conservation.json", report)
            logger.info(f"Conservation: momentum drift {momentum:.3e}, energy drift {energy:.3e}, "
                        f"{violations} per-jump violations over {report['events']} events")
            if not report["passed"]:
                logger.error("Conservation suite failed")
                return {"status": "violation", "message": "conservation budget exceeded", "report": report}
            return {"status": "success", "report": report}

        except InvariantViolation as e:
            logger.error(f"Invariant violation: {e}")
            return {"status": "violation", "message": str(e), "details": e.details}
        except KacError as e:
            logger.error(f"Conservation experiment failed: {e}")
            return {"status": "error", "message": str(e)}


# Global orchestrator instance
conserve_orchestrator = ConserveOrchestrator()


async def run_conserve(cfg: ExperimentConfig, out_dir: Path):
    return await conserve_orchestrator.run(cfg, out_dir)

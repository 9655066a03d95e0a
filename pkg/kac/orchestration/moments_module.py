"""
Moments experiment - per-jump growth bound, Povzner positivity, lambda_p
and concentration of moments
"""
import asyncio
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from kac.config import ExperimentConfig
from kac.errors import InvariantViolation, KacError
from kac.kernels import HALF_PI
from kac.moments import (concentration_experiment, lambda_k, lambda_p_coefficient,
                         lambda_p_coefficient_check, povzner_beta)
from kac.particle import RecordMode, SimConfig, sample_initial, simulate
from kac.records import write_json, write_moment_csv
from kac.statistics import frozen_linear_rate, linear_rate_holds, mean_and_stderr
from kac.orchestration.replica_module import prepare_kernel, replica_orchestrator

logger = logging.getLogger(__name__)

POVZNER_ORDERS = (4.0, 6.0, 8.0, 12.0)
POVZNER_ANGLES = 10 ** 4


def _moment_replica(job) -> Dict[str, Any]:
    spec, table, sim, orders, seed, replica = job
    state = sample_initial(sim.initial, sim.N, spec.d, seed, r=sim.temperature_ratio, replica=replica)
    cfg = SimConfig(K=sim.K, t_final=sim.t_final, seed=seed, replica=replica,
                    record=RecordMode.TRAJECTORY, dt=sim.dt, track_moments=orders)
    traj = simulate(state, spec, table, cfg)
    return {
        "times": traj.times,
        "lambda": {k: [lambda_k(snap, k) for snap in traj.snapshots] for k in orders},
        "violations": traj.moment_violations,
        "max_ratio": {k: traj.moment_trace.max_ratio(k) for k in orders},
        "events": traj.accepted,
    }


def propagation_check(times, results, orders) -> Dict[str, Any]:
    """
    Fit C in E Lambda_k(t) <= (1 + C t) Lambda_k(0) on the first half of the
    replicas, then check the frozen C on the second half.
    """
    pilot = max(len(results) // 2, 1)
    growth = {}
    for k in orders:
        ratios = np.asarray([np.asarray(r["lambda"][k]) / r["lambda"][k][0] for r in results])
        constant = frozen_linear_rate(times, ratios[:pilot])
        holds = linear_rate_holds(times, ratios[pilot:], constant) if len(results) > pilot else None
        growth[str(k)] = {"constant": constant, "holds": holds}
    return {"pilot_replicas": pilot, "check_replicas": len(results) - pilot, "by_order": growth}


def povzner_grid(orders=POVZNER_ORDERS, angles: int = POVZNER_ANGLES) -> Dict[str, Any]:
    """Minimum of beta(p, theta) over a log-spaced grid of angles in (0, pi/2]."""
    theta = np.exp(np.linspace(np.log(1e-6), np.log(HALF_PI), angles))
    theta[-1] = HALF_PI
    minima = {str(p): float(np.min(povzner_beta(p, theta))) for p in orders}
    return {"angles": angles, "minimum": minima, "positive": all(m > 0 for m in minima.values())}


class MomentsOrchestrator:
    """Per-jump moment checks plus the concentration scan across N."""

    async def run(self, cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
        try:
            spec, table = prepare_kernel(cfg)
            sim, ens, exp = cfg.sim, cfg.ensemble, cfg.experiment
            threads = ens.resolved_threads()
            orders = tuple(sorted(set(sim.track_moments) | {exp.moment_p, 2.0}))

            jobs = [(spec, table, sim, orders, ens.master_seed, r) for r in range(ens.replicas)]
            results = await replica_orchestrator.map(_moment_replica, jobs, threads)
            times = results[0]["times"]
            mean_curves = {k: np.mean([r["lambda"][k] for r in results], axis=0).tolist() for k in orders}
            write_moment_csv(out_dir / "moments.csv", times, mean_curves)

            violations = sum(r["violations"] for r in results)
            growth = propagation_check(times, results, orders)

            n_values = exp.N_list or [sim.N]
            concentration = await asyncio.to_thread(
                concentration_experiment, spec, table, SimConfig(K=sim.K, t_final=sim.t_final, dt=sim.dt),
                exp.moment_p, exp.b, ens.replicas, n_values, sim.initial.value, ens.master_seed,
                None if exp.b is not None else exp.b_factor, exp.epsilon, replica_orchestrator.mapper(threads))

            lambdas = {}
            for p in POVZNER_ORDERS:
                primary = lambda_p_coefficient(spec, table, p)
                lambdas[str(p)] = {"value": primary, "check": lambda_p_coefficient_check(spec, p)}

            povzner = povzner_grid()
            events_mean, events_se = mean_and_stderr([r["events"] for r in results])
            report = {
                "orders": list(orders),
                "replicas": ens.replicas,
                "events_mean": events_mean,
                "events_stderr": events_se,
                "per_jump_violations": violations,
                "max_jump_ratio": {str(k): max(r["max_ratio"][k] for r in results) for k in orders},
                "lambda_2_max_drift": float(np.max(np.abs(np.asarray(mean_curves[2.0]) - 2.0))),
                "propagation_constant": growth,
                "povzner": povzner,
                "lambda_p": lambdas,
                "concentration": concentration.model_dump(),
            }
            write_json(out_dir / "moments.json", report)
            logger.info(f"Moments: {violations} per-jump violations, concentration "
                        f"{concentration.exceedance} over N={concentration.n_values}")
            if violations or not povzner["positive"]:
                logger.error("Moment bounds violated")
                return {"status": "violation", "message": "moment bound violated", "report": report}
            return {"status": "success", "report": report}

        except InvariantViolation as e:
            logger.error(f"Invariant violation: {e}")
            return {"status": "violation", "message": str(e), "details": e.details}
        except KacError as e:
            logger.error(f"Moments experiment failed: {e}")
            return {"status": "error", "message": str(e)}


# Global orchestrator instance
moments_orchestrator = MomentsOrchestrator()


async def run_moments(cfg: ExperimentConfig, out_dir: Path):
    return await moments_orchestrator.run(cfg, out_dir)

"""
Branching experiment - growth of the signed linearised process over a
(K, t) grid in an environment recorded from a particle run
"""
import logging
import math
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from scipy import stats

from kac.branching import (Environment, SignedParticle, branch_simulate, fit_growth, freeze_growth_constant,
                           growth_bound_holds, summarize)
from kac.config import ExperimentConfig
from kac.errors import InvariantViolation, KacError, PopulationExplosion
from kac.particle import RecordMode, SimConfig, sample_initial, simulate
from kac.records import PopulationSummary, write_json, write_jsonl
from kac.statistics import mean_and_stderr
from kac.orchestration.replica_module import prepare_kernel, replica_orchestrator

logger = logging.getLogger(__name__)

# pilot replicas fit the growth constant and are never reused for the check
PILOT_OFFSET = 10 ** 6


def _branch_replica(job) -> Dict[str, Any]:
    env, spec, table, K, t, start_v, sign, seed, replica, cap = job
    start = SignedParticle(start_v, sign, 0.0)
    population = branch_simulate(env, spec, table, K, start, t, seed, replica=replica, cap=cap)
    summary = summarize(population)
    summary.update(K=K, replica=replica)
    summary["norms"] = np.linalg.norm(population.velocities[:population.size], axis=1).tolist()
    return summary


def grid_points(env: Environment, grid, results) -> List[Dict[str, Any]]:
    """Per-(K, t) means of the population summaries."""
    points = []
    for K, t in grid:
        mine = [res for res in results if res["K"] == K and res["t"] == t]
        second, second_se = mean_and_stderr([res["unsigned_second_moment"] for res in mine])
        mass, mass_se = mean_and_stderr([res["signed_mass"] for res in mine])
        points.append({
            "K": K, "t": t, "Kt": K * t,
            "unsigned_second_moment": second, "unsigned_second_moment_stderr": second_se,
            "signed_mass": mass, "signed_mass_stderr": mass_se,
            "size_mean": mean_and_stderr([res["size"] for res in mine])[0],
            "integrated_lambda": env.integrated_lambda(0.0, t),
        })
    return points


class BranchOrchestrator:
    """Records an environment, then runs populations on each (K, t) grid point."""

    async def run(self, cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
        try:
            spec, table = prepare_kernel(cfg)
            sim, ens, exp = cfg.sim, cfg.ensemble, cfg.experiment
            horizon = max(exp.branch_t_list)
            state = sample_initial(sim.initial, sim.N, spec.d, ens.master_seed, r=sim.temperature_ratio)
            env_run = simulate(state, spec, table, SimConfig(K=sim.K, t_final=horizon, seed=ens.master_seed,
                                                             record=RecordMode.TRAJECTORY,
                                                             dt=horizon / sim.snapshots))
            env = Environment.from_trajectory(env_run, spec.gamma)
            start_v = np.zeros(spec.d)
            start_v[0] = 1.0

            grid = [(K, t) for K in exp.branch_K_list for t in exp.branch_t_list]
            jobs = [(env, spec, table, K, t, start_v, 1, ens.master_seed, r, exp.population_cap)
                    for K, t in grid for r in range(ens.replicas)]
            # mirrored start on the first grid point for the sign-symmetry check
            K0, t0 = grid[0]
            mirrored = [(env, spec, table, K0, t0, start_v, -1, ens.master_seed, ens.replicas + r,
                         exp.population_cap) for r in range(ens.replicas)]
            n_pilot = max(2, ens.replicas // 4)
            pilot_jobs = [(env, spec, table, K, t, start_v, 1, ens.master_seed, PILOT_OFFSET + r,
                           exp.population_cap) for K, t in grid for r in range(n_pilot)]
            results = await replica_orchestrator.map(_branch_replica, jobs + mirrored + pilot_jobs,
                                                     ens.resolved_threads())
            plain = results[:len(jobs)]
            flipped = results[len(jobs):len(jobs) + len(mirrored)]
            pilot = results[len(jobs) + len(mirrored):]

            write_jsonl(out_dir / "populations.jsonl",
                        [PopulationSummary(**{k: v for k, v in res.items() if k != "norms"})
                         for res in plain])

            points = grid_points(env, grid, plain)
            c = freeze_growth_constant(env, grid_points(env, grid, pilot), start_v)
            holds, bounds = growth_bound_holds(env, points, start_v, c)
            for pt, bound in zip(points, bounds):
                pt["bound"] = bound

            growth = None
            if len(points) >= 5:
                growth = fit_growth([pt["Kt"] for pt in points],
                                    [math.log(pt["unsigned_second_moment"]) for pt in points])

            up = np.concatenate([np.asarray(res["norms"]) for res in plain if res["K"] == K0 and res["t"] == t0])
            down = np.concatenate([np.asarray(res["norms"]) for res in flipped])
            symmetry = stats.ks_2samp(up, down)
            report = {
                "environment": {"N": sim.N, "K": sim.K, "horizon": horizon,
                                "lambda_2_gamma_sup": env.lambda_2_gamma_sup, "max_norm": env.max_norm},
                "replicas": ens.replicas,
                "grid": points,
                "fitted_c": c,
                "pilot_replicas": n_pilot,
                "bound_holds": holds,
                "growth": growth,
                "sign_symmetry_pvalue": float(symmetry.pvalue),
                "mirrored_signed_mass": mean_and_stderr([res["signed_mass"] for res in flipped])[0],
            }
            write_json(out_dir / "branch.json", report)
            logger.info(f"Branching: pilot c={c:.4g}, bound holds on independent replicas: {holds}, "
                        f"growth {growth}")
            return {"status": "success", "report": report}

        except PopulationExplosion as e:
            logger.error(f"Population explosion: {e}")
            return {"status": "error", "message": str(e)}
        except InvariantViolation as e:
            logger.error(f"Invariant violation: {e}")
            return {"status": "violation", "message": str(e), "details": e.details}
        except KacError as e:
            logger.error(f"Branching experiment failed: {e}")
            return {"status": "error", "message": str(e)}


# Global orchestrator instance
branch_orchestrator = BranchOrchestrator()


async def run_branch(cfg: ExperimentConfig, out_dir: Path):
    return await branch_orchestrator.run(cfg, out_dir)

"""
Experiment orchestrators. Each module exposes an orchestrator class, a global
instance and async wrapper functions; ``run_experiment`` dispatches on the
configured experiment kind.
"""
import logging
from pathlib import Path
from typing import Any, Dict

from kac.config import ExperimentConfig, ExperimentKind
from kac.orchestration.branch_module import run_branch
from kac.orchestration.chaos_scan_module import run_chaos_scan
from kac.orchestration.conserve_module import run_conserve
from kac.orchestration.couple_scan_module import run_couple_scan
from kac.orchestration.equilibrate_module import run_equilibrate
from kac.orchestration.g_properties_module import run_g_properties
from kac.orchestration.moments_module import run_moments

logger = logging.getLogger(__name__)

EXPERIMENTS = {
    ExperimentKind.CONSERVE: run_conserve,
    ExperimentKind.MOMENTS: run_moments,
    ExperimentKind.COUPLE_SCAN: run_couple_scan,
    ExperimentKind.CHAOS_SCAN: run_chaos_scan,
    ExperimentKind.EQUILIBRATE: run_equilibrate,
    ExperimentKind.G_PROPERTIES: run_g_properties,
    ExperimentKind.BRANCH: run_branch,
}


async def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
    kind = cfg.experiment.kind
    logger.info(f"Starting experiment {kind.value} (seed {cfg.ensemble.master_seed}, "
                f"{cfg.ensemble.replicas} replicas)")
    result = await EXPERIMENTS[kind](cfg, Path(out_dir))
    logger.info(f"Experiment {kind.value} finished with status {result['status']}")
    return result

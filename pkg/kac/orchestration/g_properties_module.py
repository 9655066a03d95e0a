"""
Kernel and geometry property checks - H/G round trip, G decay band, L2
difference bound, integrability, and the Tanaka rotation identity
"""
import logging
import math
from pathlib import Path
from typing import Any, Dict

import numpy as np

from kac.config import ExperimentConfig
from kac.errors import KacError
from kac.geometry import gamma_of, tanaka_rotation, uniform_azimuth
from kac.kernels import (G_of, G_prime, H_of, g_difference_l2, g_squared_integral,
                         g_tail_integral)
from kac.records import write_json
from kac.rng import make_rng
from kac.orchestration.replica_module import prepare_kernel, replica_orchestrator

logger = logging.getLogger(__name__)

ROUND_TRIP_TOLERANCE = 1e-8
IDENTITY_TOLERANCE = 1e-9
L2_FIT_MARGIN = 1.25
TANAKA_CHUNK = 5000


def round_trip_check(spec, table, samples: int) -> Dict[str, Any]:
    z = np.logspace(-3.0, 6.0, samples)
    theta = np.asarray(G_of(spec, table, z))
    back = np.asarray(H_of(spec, table, theta))
    err = np.abs(back - z) / np.maximum(1.0, z)
    band = theta * (1.0 + z) ** (1.0 / spec.nu)
    return {
        "samples": samples,
        "max_round_trip_error": float(err.max()),
        "round_trip_ok": bool(err.max() <= ROUND_TRIP_TOLERANCE),
        "monotone": bool(np.all(np.diff(theta) < 0)),
        "band_min": float(band.min()),
        "band_max": float(band.max()),
        "band_positive": bool(band.min() > 0 and np.isfinite(band.max())),
    }


def derivative_check(spec, table) -> Dict[str, Any]:
    z = np.logspace(-2.0, 4.0, 13)
    h = 1e-6 * z
    numeric = (np.asarray(G_of(spec, table, z + h)) - np.asarray(G_of(spec, table, z - h))) / (2.0 * h)
    exact = np.asarray(G_prime(spec, table, z))
    rel = np.abs(numeric - exact) / np.abs(exact)
    return {"max_relative_error": float(rel.max())}


def l2_bound_check(spec, table, rng: np.random.Generator, pairs: int = 100) -> Dict[str, Any]:
    """Fit c on a grid of ratios x/y with y = 1, freeze it, then test random pairs."""
    ratios = np.concatenate([np.logspace(-1.0, 1.0, 21), [0.99, 1.01]])
    fit = [g_difference_l2(spec, table, r, 1.0) * (r + 1.0) / (r - 1.0) ** 2 for r in ratios if r != 1.0]
    c = L2_FIT_MARGIN * max(fit)
    xs = np.exp(rng.uniform(math.log(0.3), math.log(3.0), pairs))
    ys = np.exp(rng.uniform(math.log(0.3), math.log(3.0), pairs))
    worst = 0.0
    for x, y in zip(xs, ys):
        if x == y:
            continue
        worst = max(worst, g_difference_l2(spec, table, x, y) / (c * (x - y) ** 2 / (x + y)))
    base = g_difference_l2(spec, table, 0.5, 1.5)
    scaled = g_difference_l2(spec, table, 1.0, 3.0)
    return {
        "fitted_c": c,
        "pairs": pairs,
        "max_ratio_to_bound": worst,
        "bound_holds": bool(worst <= 1.0),
        "scaling_ratio": scaled / base,
    }


def integrability_check(spec, table) -> Dict[str, Any]:
    partial = {f"{z_max:g}": g_squared_integral(spec, table, z_max) for z_max in (1e2, 1e3, 1e4)}
    total = g_squared_integral(spec, table)
    return {"g_squared_partial": partial, "g_squared_total": total,
            "g_tail_integral": g_tail_integral(spec, table)}


def _tanaka_chunk(job) -> Dict[str, Any]:
    d, seed, chunk, size = job
    rng = make_rng(seed, replica=chunk, stream=10 + d)
    worst_identity = 0.0
    worst_inequality = 0.0
    for _ in range(size):
        X = rng.standard_normal(d) * math.exp(rng.normal())
        Y = rng.standard_normal(d) * math.exp(rng.normal())
        phi = uniform_azimuth(rng, d)
        rot = tanaka_rotation(X, Y)
        phi_1 = rot.adapted_first_coordinate(phi)
        nx, ny = float(np.linalg.norm(X)), float(np.linalg.norm(Y))
        lhs = float(gamma_of(X, phi) @ gamma_of(Y, rot.apply(phi)))
        rhs = phi_1 ** 2 * float(X @ Y) + (1.0 - phi_1 ** 2) * nx * ny
        worst_identity = max(worst_identity, abs(lhs - rhs) / (nx * ny))
        worst_inequality = max(worst_inequality, (float(X @ Y) - lhs) / (nx * ny))
    return {"d": d, "identity": worst_identity, "inequality": worst_inequality}


class GPropertiesOrchestrator:
    """Numerical checks of the G estimates and of the coupling rotation."""

    async def run(self, cfg: ExperimentConfig, out_dir: Path) -> Dict[str, Any]:
        try:
            spec, table = prepare_kernel(cfg)
            exp, ens = cfg.experiment, cfg.ensemble
            rng = make_rng(ens.master_seed, stream=9)

            kernel = {
                "round_trip": round_trip_check(spec, table, exp.g_samples),
                "derivative": derivative_check(spec, table),
                "l2_bound": l2_bound_check(spec, table, rng),
                "integrability": integrability_check(spec, table),
            }

            jobs = []
            for d in (3, 4, 5):
                remaining, chunk = exp.tanaka_samples, 0
                while remaining > 0:
                    size = min(TANAKA_CHUNK, remaining)
                    jobs.append((d, ens.master_seed, chunk, size))
                    remaining -= size
                    chunk += 1
            chunks = await replica_orchestrator.map(_tanaka_chunk, jobs, ens.resolved_threads())
            tanaka = {}
            for d in (3, 4, 5):
                mine = [c for c in chunks if c["d"] == d]
                tanaka[str(d)] = {"max_identity_error": max(c["identity"] for c in mine),
                                  "max_inequality_violation": max(c["inequality"] for c in mine)}
            tanaka_ok = all(v["max_identity_error"] <= IDENTITY_TOLERANCE
                            and v["max_inequality_violation"] <= IDENTITY_TOLERANCE for v in tanaka.values())

            report = {"nu": spec.nu, "kernel": kernel, "tanaka": tanaka, "tanaka_ok": tanaka_ok,
                      "samples_per_dimension": exp.tanaka_samples}
            write_json(out_dir / "g_properties.json", report)
            round_trip = kernel["round_trip"]
            logger.info(f"G properties: round trip {round_trip['max_round_trip_error']:.3e}, "
                        f"band [{round_trip['band_min']:.4g}, {round_trip['band_max']:.4g}], "
                        f"L2 ratio {kernel['l2_bound']['max_ratio_to_bound']:.3f}")
            if not (tanaka_ok and round_trip["round_trip_ok"] and round_trip["monotone"]):
                logger.error("Kernel or rotation identity check failed")
                return {"status": "violation", "message": "kernel or rotation identity check failed",
                        "report": report}
            return {"status": "success", "report": report}

        except KacError as e:
            logger.error(f"G properties check failed: {e}")
            return {"status": "error", "message": str(e)}


# Global orchestrator instance
g_properties_orchestrator = GPropertiesOrchestrator()


async def run_g_properties(cfg: ExperimentConfig, out_dir: Path):
    return await g_properties_orchestrator.run(cfg, out_dir)

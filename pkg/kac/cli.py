"""
Command-line entry point: ``kac run``, ``kac validate`` and ``kac version``.
"""

import argparse
import asyncio
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

from kac import __version__
from kac.config import ExperimentConfig, dump_config, load_config
from kac.errors import ConfigError, KacError
from kac.orchestration import run_experiment
from kac.records import build_manifest, utc_now, validate_output_dir, write_json

logger = logging.getLogger(__name__)

EXIT_SUCCESS = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2
EXIT_CONFIG = 3

STATUS_EXIT_CODES = {"success": EXIT_SUCCESS, "violation": EXIT_VIOLATION, "error": EXIT_ERROR}


def setup_logging(out_dir: Optional[Path] = None, level: Optional[str] = None) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if out_dir is not None:
        handlers.append(logging.FileHandler(out_dir / "kac.log"))
    logging.basicConfig(
        level=(level or os.getenv("KAC_LOG_LEVEL", "INFO")).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _cli_overrides(seed: Optional[int], threads: Optional[int], out: Optional[str]) -> dict:
    overrides = {}
    ensemble = {}
    if seed is not None:
        ensemble["master_seed"] = seed
    if threads is not None:
        ensemble["threads"] = threads
    if ensemble:
        overrides["ensemble"] = ensemble
    if out is not None:
        overrides["output_dir"] = out
    return overrides


def run(config_path: str, seed: Optional[int] = None, threads: Optional[int] = None,
        out: Optional[str] = None) -> int:
    """Run the configured experiment and return the process exit code."""
    try:
        cfg = load_config(config_path, _cli_overrides(seed, threads, out))
    except ConfigError as e:
        setup_logging()
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(out_dir)
    return _run_config(cfg, out_dir)


def _run_config(cfg: ExperimentConfig, out_dir: Path) -> int:
    started_at = utc_now()
    start = time.perf_counter()
    threads = cfg.ensemble.resolved_threads()
    try:
        result = asyncio.run(run_experiment(cfg, out_dir))
    except KacError as e:
        logger.error(f"Experiment aborted: {e}")
        result = {"status": "error", "message": str(e)}
    except Exception as e:
        logger.error(f"Experiment crashed: {type(e).__name__}: {e}")
        result = {"status": "error", "message": f"{type(e).__name__}: {e}"}

    dump_config(cfg, out_dir / "config.yaml")
    status = result.get("status", "error")
    try:
        files = validate_output_dir(out_dir)
    except KacError as e:
        logger.error(f"Output validation failed: {e}")
        status, files = "error", []
    manifest = build_manifest(
        experiment=cfg.experiment.kind.value, status=status, config_hash=cfg.config_hash(),
        master_seed=cfg.ensemble.master_seed, threads=threads, started_at=started_at,
        wall_time_s=time.perf_counter() - start, files=files + ["manifest.json"],
    )
    write_json(out_dir / "manifest.json", manifest)
    if status != "success":
        logger.error(f"Run finished with status {status}: {result.get('message', '')}")
    else:
        logger.info(f"Run finished in {manifest.wall_time_s:.2f}s; outputs in {out_dir}")
    return STATUS_EXIT_CODES.get(status, EXIT_ERROR)


def validate(config_path: str) -> int:
    """Parse and validate a config without running it."""
    setup_logging()
    try:
        cfg = load_config(config_path)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    logger.info(f"{config_path}: valid {cfg.experiment.kind.value} config (hash {cfg.config_hash()[:12]})")
    return EXIT_SUCCESS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kac", description="Kac particle system experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run the experiment named in a config file")
    run_parser.add_argument("config", help="TOML or YAML experiment config")
    run_parser.add_argument("--seed", type=int, help="override ensemble.master_seed")
    run_parser.add_argument("--threads", type=int, help="override ensemble.threads")
    run_parser.add_argument("--out", help="override output_dir")

    validate_parser = sub.add_parser("validate", help="check a config file")
    validate_parser.add_argument("config")

    sub.add_parser("version", help="print the package version")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.seed, args.threads, args.out)
    if args.command == "validate":
        return validate(args.config)
    print(__version__)
    return EXIT_SUCCESS


if __name__ == "__main__":
    sys.exit(main())

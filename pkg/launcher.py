"""
psflow launcher - command-line entry point for the pipelines and the results service
"""

import argparse
import os
import sys
from pathlib import Path

import psutil

PROJECT_ROOT = Path(__file__).parent.absolute()
PACKAGE_ROOT = PROJECT_ROOT / "psflow"

SUBCOMMANDS = ("solve-prototype", "rescale", "solve-direct", "talenti", "verify", "positivity-report")


def set_threads(threads: int):
    """Pin BLAS/OpenMP worker counts before numpy is imported"""
    for name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[name] = str(threads)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="psflow: prototype flow and p-Sobolev flow laboratory")
    parser.add_argument("--log-level", default=os.getenv("LOG_LEVEL", "INFO"),
                        help="Logging level (DEBUG, INFO, WARNING, ERROR)")
    parser.add_argument("--log-file", default=os.getenv("LOG_FILE"), help="Optional rotating log file")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in SUBCOMMANDS:
        cmd = sub.add_parser(name, help=f"Run {name}")
        cmd.add_argument("--config", required=True, type=Path, help="INI run configuration")
        cmd.add_argument("--out", type=Path, help="Output directory (overrides PSFLOW_OUT and [output])")
        cmd.add_argument("--seed", type=int, help="Seed for randomized property probes")
        cmd.add_argument("--threads", type=int, default=psutil.cpu_count(logical=False) or 1,
                         help="Worker threads for the linear algebra backend")

    serve = sub.add_parser("serve", help="Start the local results service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--reload", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        set_threads(args.threads)
    sys.path.insert(0, str(PACKAGE_ROOT))

    from utils.logging_config import get_logger, setup_logging
    setup_logging(log_level=args.log_level, log_file=args.log_file)
    logger = get_logger("launcher")

    if args.command == "serve":
        os.chdir(PACKAGE_ROOT)
        from app import serve as run_server
        run_server(host=args.host, port=args.port, reload=args.reload)
        return 0

    from pipeline.commands import run_command
    result = run_command(args.command, config_path=args.config, out=args.out, seed=args.seed)
    if result.exit_code == 0:
        logger.info(f"{args.command} wrote {len(result.artifacts)} artifacts to {result.out_dir}")
    else:
        logger.error(f"{args.command} exited with code {result.exit_code}: {result.message}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())

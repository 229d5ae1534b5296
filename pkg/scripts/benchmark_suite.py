"""
Benchmark suite: run every pipeline stage for each benchmark config, then verify
"""
import argparse
import logging
import sys
import time
from pathlib import Path

# Add the package to path
package_path = Path(__file__).parent.parent / "psflow"
sys.path.insert(0, str(package_path))

from pipeline.commands import run_command
from utils.logging_config import setup_logging

CONFIG_ROOT = Path(__file__).parent.parent / "configs"
DEFAULT_CONFIGS = ("benchmark_1d.ini", "baseline_1d.ini", "benchmark_radial.ini")
STAGES = ("solve-prototype", "rescale", "solve-direct", "talenti", "positivity-report", "verify")

logger = logging.getLogger("benchmark_suite")


class BenchmarkSuite:
    """Run the full stage sequence per config and collect exit codes"""

    def __init__(self, configs, out_root=None):
        self.configs = [Path(c) for c in configs]
        self.out_root = Path(out_root) if out_root else None
        self.results = {}

    def run_config(self, config_path: Path):
        out = self.out_root / config_path.stem if self.out_root else None
        codes = {}
        for stage in STAGES:
            started = time.perf_counter()
            result = run_command(stage, config_path=config_path, out=out)
            codes[stage] = result.exit_code
            logger.info(f"{config_path.name} {stage}: exit {result.exit_code} "
                        f"in {time.perf_counter() - started:.1f}s")
            # later stages need the prototype store
            if stage == "solve-prototype" and result.exit_code not in (0, 4):
                break
        self.results[config_path.name] = codes
        return codes

    def run(self) -> int:
        for config_path in self.configs:
            self.run_config(config_path)
        failed = {name: codes for name, codes in self.results.items() if any(codes.values())}
        for name, codes in self.results.items():
            print(f"{name}: " + ", ".join(f"{stage}={code}" for stage, code in codes.items()))
        return 1 if failed else 0


def main():
    parser = argparse.ArgumentParser(description="Run the psflow benchmark suite")
    parser.add_argument("configs", nargs="*", help="Config files (default: the benchmark set)")
    parser.add_argument("--out", help="Root directory; each config writes to <out>/<config name>")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args()
    setup_logging(log_level=args.log_level)
    configs = args.configs or [CONFIG_ROOT / name for name in DEFAULT_CONFIGS]
    sys.exit(BenchmarkSuite(configs, args.out).run())


if __name__ == "__main__":
    main()

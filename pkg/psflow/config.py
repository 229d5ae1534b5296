"""
Configuration settings for psflow
"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Base paths
PROJECT_ROOT = Path(__file__).parent.parent
PACKAGE_ROOT = Path(__file__).parent
CONFIG_ROOT = PROJECT_ROOT / "configs"

load_dotenv(PROJECT_ROOT / ".env")

VERSION = "0.1.0"

# Artifact root; PSFLOW_OUT overrides both this default and the [output] block
DEFAULT_OUT = PROJECT_ROOT / "runs"
PSFLOW_OUT = os.getenv("PSFLOW_OUT")

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE")

# Exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_INCOMPLETE = 3
EXIT_INVARIANT = 4

# Artifact layout under the output directory
PROTOTYPE_DIR = "prototype"
RESCALED_DIR = "rescaled"
DIRECT_DIR = "direct"
TALENTI_DIR = "talenti"
POSITIVITY_DIR = "positivity"
MANIFEST_NAME = "manifest.json"
REPORT_NAME = "verification.json"

# Direct-run horizon when [solver] t_end is unset (the time map then stops at s = 0.99 S*)
DIRECT_T_END = 1.0

# Refinement studies in verify
ENERGY_STEP_LADDER = (4e-4, 2e-4, 1e-4)
TALENTI_REFINEMENTS = 3
PROBE_PAIRS = 100_000
PROBE_EXPONENTS = (2.0, 2.5, 3.0)

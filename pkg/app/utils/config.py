import os
from pathlib import Path
from dotenv import load_dotenv

# Get the project root directory
ROOT_DIR = Path(__file__).parent.parent.parent

# Load environment variables from .env file if it exists
load_dotenv(ROOT_DIR / ".env")

# Experiment defaults
DEFAULT_SEED = int(os.getenv("CASCADE_SEED", "0"))
DEFAULT_TRIALS = int(os.getenv("CASCADE_TRIALS", "50"))
DEFAULT_WORKERS = int(os.getenv("CASCADE_WORKERS", "1"))

# Quantile modes: "strict" follows the overflow branch (+inf), "clamped" uses the max score
DEFAULT_QUANTILE_MODE = os.getenv("CASCADE_QUANTILE_MODE", "strict")
DEFAULT_CLUSTER_QUANTILE_MODE = os.getenv("CASCADE_CLUSTER_QUANTILE_MODE", "clamped")

# Path configuration
OUTPUT_DIR = Path(os.getenv("CASCADE_OUTPUT_DIR", str(ROOT_DIR / "results")))

# Logging
LOG_LEVEL = os.getenv("CASCADE_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

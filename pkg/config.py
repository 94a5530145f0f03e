from dotenv import load_dotenv

import logging
import os

# Load environment variables from .env file
load_dotenv("dev.env")

# Defaults, overwritten below when the environment provides a value
SENTRY_DSN = None
LOG_LEVEL = "INFO"
OUT_DIR = "out"
SLOW_STAGE_MS = 5000

# Retrieve configuration variables from environment variables
try:
    # Sentry DSN (Data Source Name) for error tracking
    SENTRY_DSN = os.getenv("SENTRY_DSN")

    # Root logger level name
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

    # Default artifact directory when neither the config file nor --out sets one
    OUT_DIR = os.getenv("NREGION_OUT_DIR", "out")

    # Stages slower than this many milliseconds are reported by @timer
    SLOW_STAGE_MS = int(os.getenv("NREGION_SLOW_STAGE_MS", "5000"))

except (TypeError, ValueError) as ex:
    # Log an error if there's an issue while reading configuration variables
    logging.error(f"Error while reading config: {ex}")

#!/usr/bin/env python3
"""
Request-cloning simulator - Startup Script
Configures logging, checks the environment and dispatches the command line
"""

import os
import sys
import logging
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

# Import after path setup
from clonesim import __version__
from clonesim.main import main as cli_main
from clonesim.utils.config import config


def setup_logging():
    """Setup logging configuration."""
    handlers = [logging.StreamHandler(sys.stdout)]
    if config.LOG_FILE:
        handlers.append(logging.FileHandler(config.LOG_FILE))

    logging.basicConfig(
        level=config.log_level(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers
    )


def validate_environment():
    """Validate configuration values and the preset directory."""
    logger = logging.getLogger(__name__)

    if not config.validate():
        logger.warning("Some configuration values are out of range; defaults will be used where possible")

    presets = Path(config.PRESETS_DIR)
    if not presets.is_absolute() and not presets.exists():
        presets = project_root / config.PRESETS_DIR
    if not presets.is_dir():
        logger.error(f"Preset directory not found: {presets}")
        return False

    output = Path(config.OUTPUT_DIR)
    if output.exists() and not os.access(output, os.W_OK):
        logger.error(f"Output directory is not writable: {output}")
        return False

    logger.debug(f"clonesim {__version__}: presets in {presets}, output under {output}")
    return True


def main():
    """Main startup function."""
    setup_logging()
    logger = logging.getLogger(__name__)

    try:
        if not validate_environment():
            logger.error("Environment validation failed. Please check your configuration.")
            sys.exit(1)

        sys.exit(cli_main(sys.argv[1:]))

    except KeyboardInterrupt:
        logger.info("Stopped by user")
        sys.exit(130)


if __name__ == "__main__":
    main()

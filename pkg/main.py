#!/usr/bin/env python3
"""
Main entry point for the facegan command line
"""
import logging
import sys

from dotenv import load_dotenv

from facegan.cli import configure_logging, main

# Load environment variables (FACEGAN_LOG_LEVEL, FACEGAN_DEVICE)
load_dotenv()

# Configure logging
configure_logging()

logger = logging.getLogger(__name__)

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        sys.exit(1)

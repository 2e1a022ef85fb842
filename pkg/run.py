#!/usr/bin/env python3
"""
Deep MPC authority-allocation simulator
Main entry point for the command-line interface
"""
import sys

from loguru import logger

from src.main import main


def entry() -> None:
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(130)


if __name__ == "__main__":
    entry()

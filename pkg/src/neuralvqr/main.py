"""
Main entry point for the neuralvqr model server
"""

import logging
import os

import uvicorn

from .api.server import create_app
from .logging_setup import configure_logging

logger = logging.getLogger(__name__)

app = create_app()


def main():
    """Run the neuralvqr model server"""
    configure_logging()
    port = int(os.environ.get("PORT", 8080))
    host = os.environ.get("HOST", "0.0.0.0")

    logger.info(f"neuralvqr model server listening on {host}:{port}")

    uvicorn.run("neuralvqr.main:app", host=host, port=port)


if __name__ == "__main__":
    main()

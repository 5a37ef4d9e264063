#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
WSGI entry point for the sample SOAP service.

    gunicorn --workers 1 --threads 8 --bind 127.0.0.1:8080 run_api_server:app

The configuration file is read from SOAPSEC_CONFIG (default
config/service.conf). Nonces and sessions live in the process unless
SOAPSEC_REDIS_URL is set, so run a single worker without Redis.
"""

import logging
import os
import sys
from datetime import datetime

from dotenv import load_dotenv

from src.utils.file_utils import ensure_dir_exists

# Load environment variables
load_dotenv()

# Configure detailed logging to file
log_dir = ensure_dir_exists(os.getenv("SOAPSEC_LOG_DIR", "logs"))
log_file = log_dir / f"api_server_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
logging.basicConfig(
    level=getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(log_file),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)
logger.info(f"Logging to {log_file}")

from src.api_server import create_app  # noqa: E402
from src.security.errors import ConfigError  # noqa: E402
from src.utils.config import ServiceConfig  # noqa: E402

config_path = os.getenv("SOAPSEC_CONFIG", os.path.join("config", "service.conf"))
try:
    config = ServiceConfig.from_file(config_path)
except ConfigError as e:
    logger.error(f"Cannot start the service: {e}")
    sys.exit(2)

app = create_app(config)
logger.info(f"Service ready: scenario={config.policy.name}, config={config_path}")

if __name__ == "__main__":
    app.run(host=config.host, port=config.port, threaded=True)

#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
File Utilities Module

Helpers for the files the toolkit writes: generated keys, certificates,
benchmark reports and logs.
"""

import logging
import os
from pathlib import Path
from typing import Optional, Union

# Configure logging
logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def ensure_dir_exists(dir_path: PathLike) -> Path:
    """
    Ensure that a directory exists, creating it if necessary.

    Args:
        dir_path: Path to the directory

    Returns:
        The directory as a Path

    Raises:
        OSError: the directory cannot be created
    """
    path = Path(dir_path)
    if not path.exists():
        path.mkdir(parents=True, exist_ok=True)
        logger.info(f"Created directory: {path}")
    elif not path.is_dir():
        raise NotADirectoryError(f"not a directory: {path}")
    return path


def save_file_content(file_path: PathLike, content: Union[str, bytes],
                      mode: Optional[int] = None, encoding: str = 'utf-8') -> Path:
    """
    Save content to a file, creating parent directories.

    Args:
        file_path: Path to the file
        content: Text or bytes to save
        mode: Optional permission bits applied after writing (e.g. 0o600 for keys)
        encoding: Encoding for text content

    Returns:
        The written path
    """
    path = Path(file_path)
    ensure_dir_exists(path.parent)
    data = content.encode(encoding) if isinstance(content, str) else content
    path.write_bytes(data)
    if mode is not None:
        os.chmod(path, mode)
    logger.debug(f"Wrote {len(data)} bytes to {path}")
    return path

"""Byte-stable artifact writers: CSV with 17 significant digits, JSON with shortest repr floats.

Every write goes to a temporary file in the target directory and is moved into
place with ``os.replace``.
"""
import hashlib
import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from importlib import metadata
from typing import Any, Dict, Iterable, Optional

import pandas as pd

from twoscale.src.config import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)


def _atomic_write(path: str, text: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    tmp = None
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix='.tmp-', dir=directory)
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"Cannot write {path}: {exc}") from exc
    logger.debug("[OUTPUT] wrote %s", path)
    return path


def write_text(text: str, path: str) -> str:
    return _atomic_write(path, text)


def frame_to_csv(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')


def write_frame(df: pd.DataFrame, path: str) -> str:
    return _atomic_write(path, frame_to_csv(df))


def write_json(obj: Any, path: str) -> str:
    return _atomic_write(path, json.dumps(obj, indent=2, sort_keys=False) + '\n')


def write_report(report, fmt: str, path: str) -> str:
    """CSV holds the rows; JSON holds rows, flags and metadata."""
    if fmt == 'csv':
        return write_frame(report.to_frame(), path)
    if fmt == 'json':
        return write_json(report.to_dict(), path)
    raise ValueError(f"Unknown report format {fmt!r}; use 'csv' or 'json'")


def read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Report not found at {path}")
    return pd.read_csv(path, float_precision='round_trip')


def sha256_of(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(65536), b''):
            digest.update(chunk)
    return digest.hexdigest()


def package_version() -> str:
    try:
        return metadata.version('twoscale')
    except metadata.PackageNotFoundError:
        return '0.1.0'


def write_manifest(directory: str, command: str, config: Dict[str, Any], config_hash: str,
                   overrides: Iterable[str], flags: Dict[str, bool], artifacts: Iterable[str],
                   stats: Optional[Dict[str, Any]] = None, timestamp: bool = False) -> str:
    """manifest.json next to the artifacts; ``timestamp`` is off so reruns stay byte-identical."""
    manifest = {
        'command': command,
        'version': package_version(),
        'config_hash': config_hash,
        'config': config,
        'overrides': list(overrides),
        'passed': bool(all(flags.values())) if flags else True,
        'flags': {k: bool(v) for k, v in flags.items()},
        'artifacts': {os.path.basename(p): sha256_of(p) for p in artifacts},
        'stats': stats or {},
    }
    if timestamp:
        manifest['utc'] = datetime.now(timezone.utc).isoformat()
    return write_json(manifest, os.path.join(directory, 'manifest.json'))

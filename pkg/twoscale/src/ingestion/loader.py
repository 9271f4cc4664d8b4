import logging
import os

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def load_nodal_values(csv_path: str) -> np.ndarray:
    """
    Load nodal samples of a periodic field from CSV.

    The file holds one value per line (row-major for d = 2, axis y1 fastest),
    with no header. Samples sit on the uniform periodic grid i/m; the node at
    y = 1 is the node at y = 0 and must not be repeated.

    Args:
        csv_path: Path to the CSV file.

    Returns:
        np.ndarray: Flat array of nodal values.
    """
    if not os.path.exists(csv_path):
        raise FileNotFoundError(f"Nodal field not found at {csv_path}")

    logger.info("[LOADER] Loading nodal field from %s", csv_path)
    df = pd.read_csv(csv_path, header=None, comment='#', float_precision='round_trip')
    if df.shape[1] != 1:
        raise ValueError(f"Expected one value per line in {csv_path}, got {df.shape[1]} columns")

    values = pd.to_numeric(df.iloc[:, 0], errors='coerce').to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ValueError(f"Non-numeric or non-finite value on line {bad[0] + 1} of {csv_path}")

    logger.info("[LOADER] Loaded %d nodal values.", len(values))
    return values

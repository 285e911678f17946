import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memcap import _kernels
from memcap.memory import SupportMemory


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so individual tests never pay for it."""
    _kernels.warmup()


def make_memory(rows: np.ndarray, texts: list[str] | None = None) -> SupportMemory:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    unit = (rows / norms).astype(np.float32)
    return SupportMemory(
        embeddings=unit,
        prenorms=norms[:, 0].astype(np.float32),
        texts=texts if texts is not None else [f"entry {i}" for i in range(len(rows))],
    )

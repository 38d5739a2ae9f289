from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class LossTerm:
    """One scalar loss and, when requested, its gradient w.r.t. depth (H x W)."""

    value: float
    grad: Optional[np.ndarray] = None

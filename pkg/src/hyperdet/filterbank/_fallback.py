"""Pure-numpy SRM residual kernel, used when the compiled core is unavailable."""

import numpy as np


def group_residual_padded(padded, kernels, norms):
    """Mean of per-kernel normalized correlations over a reflect-padded (C, H+4, W+4) stack.

    Differences against the centre pixel keep constant regions exactly zero.
    """
    C, Hp, Wp = padded.shape
    H, W = Hp - 4, Wp - 4
    centre = padded[:, 2:2 + H, 2:2 + W]
    total = np.zeros((C, H, W), dtype=np.float64)
    for k in range(kernels.shape[0]):
        acc = np.zeros((C, H, W), dtype=np.float64)
        for u in range(5):
            for v in range(5):
                w = kernels[k, u, v]
                if w != 0.0:
                    acc = acc + w * (padded[:, u:u + H, v:v + W] - centre)
        total = total + acc / norms[k]
    return total / kernels.shape[0]

"""Pure-Python closed-loop rollout, same contract as the compiled kernel."""

import numpy as np


def rollout(alpha, s, W, B, K1, K2, r, x0, noise, integrate):
    T = noise.shape[0]
    n, m = W.shape[0], B.shape[1]
    X = np.empty((T + 1, n))
    U = np.empty((T, m))
    XI = np.zeros((T + 1, n))
    X[0] = x0
    for t in range(T):
        x = X[t]
        if integrate:
            fb = x - r
            u = K1 @ fb + K2 @ XI[t]
            XI[t + 1] = XI[t] + fb
        else:
            u = K1 @ x + K2 @ r
        U[t] = u
        X[t + 1] = alpha * x + np.clip(W @ x + B @ u + noise[t], 0.0, s)
    return X, U, XI

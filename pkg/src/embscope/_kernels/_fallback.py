"""Pure-Python coordinate descent, numerically identical to the compiled kernel."""
import numpy as np


def soft_threshold(z, gamma):
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def cd_gram(gram, corr, alpha, w, tol, max_sweeps):
    """Run lasso coordinate descent in place on ``w``.

    Minimises ``0.5 w'Gw - c'w + alpha*|w|_1``. Returns ``(n_sweeps, max_delta)``.
    """
    d = gram.shape[0]
    q = np.array(corr, dtype=np.float64)
    for j in range(d):
        if w[j] != 0.0:
            q -= w[j] * gram[j]
    diag = [float(gram[j, j]) for j in range(d)]
    sweep = 0
    max_delta = 0.0
    while sweep < max_sweeps:
        sweep += 1
        max_delta = 0.0
        for j in range(d):
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            old = float(w[j])
            rho = float(q[j]) + gjj * old
            new = soft_threshold(rho, alpha) / gjj
            delta = new - old
            if delta != 0.0:
                q -= delta * gram[j]
                w[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            break
    return sweep, max_delta

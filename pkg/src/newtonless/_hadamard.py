import numpy as np


def next_pow2(n):
    return 1 << max(int(n) - 1, 0).bit_length()


def fwht(X):
    """Orthonormal Walsh-Hadamard transform along axis 0 (length a power of two)."""
    X = np.array(X, dtype=np.float64, copy=True)
    N = X.shape[0]
    if N & (N - 1):
        raise ValueError("fwht needs a power-of-two number of rows")
    tail = X.shape[1:]
    h = 1
    while h < N:
        Y = X.reshape((N // (2 * h), 2, h) + tail)
        a = Y[:, 0].copy()
        Y[:, 0] += Y[:, 1]
        Y[:, 1] = a - Y[:, 1]
        h *= 2
    return X / np.sqrt(N)


def fwht_madds(N, d):
    return int(N * max(N.bit_length() - 1, 0) * d)

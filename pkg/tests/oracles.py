"""Independent from-the-definition metric implementations used as test oracles."""

import math
from fractions import Fraction


def expand(cm):
    """Confusion matrix -> list of (true, predicted) sample pairs."""
    return [(i, j) for i, row in enumerate(cm) for j, n in enumerate(row) for _ in range(int(n))]


def accuracy(cm):
    pairs = expand(cm)
    return Fraction(sum(t == p for t, p in pairs), len(pairs))


def macro_f1(cm):
    pairs = expand(cm)
    K = len(cm)
    scores = []
    for k in range(K):
        tp = sum(t == k and p == k for t, p in pairs)
        fp = sum(t != k and p == k for t, p in pairs)
        fn = sum(t == k and p != k for t, p in pairs)
        scores.append(Fraction(0) if tp + fp + fn == 0 else Fraction(2 * tp, 2 * tp + fp + fn))
    return sum(scores, Fraction(0)) / K


def mcc(cm):
    """Pearson correlation of the one-hot truth and prediction matrices
    (covariances summed over classes)."""
    pairs = expand(cm)
    K, n = len(cm), len(pairs)
    X = [[Fraction(int(t == k)) for k in range(K)] for t, _ in pairs]
    Y = [[Fraction(int(p == k)) for k in range(K)] for _, p in pairs]
    mx = [sum(r[k] for r in X) / n for k in range(K)]
    my = [sum(r[k] for r in Y) / n for k in range(K)]

    def cov(A, ma, B, mb):
        return sum((A[i][k] - ma[k]) * (B[i][k] - mb[k]) for i in range(n) for k in range(K))

    cxy, cxx, cyy = cov(X, mx, Y, my), cov(X, mx, X, mx), cov(Y, my, Y, my)
    if cxx == 0 or cyy == 0:
        return 0.0
    return float(cxy) / math.sqrt(float(cxx) * float(cyy))

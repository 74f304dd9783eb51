"""Agreement statistics between score vectors."""
import numpy as np
from scipy import stats


def _paired(a, b):
    if isinstance(a, dict):
        keys = sorted(set(a) & set(b))
        return np.array([a[k] for k in keys], float), np.array([b[k] for k in keys], float)
    return np.asarray(a, float), np.asarray(b, float)


def spearman(a, b):
    x, y = _paired(a, b)
    return float(stats.spearmanr(x, y).statistic)


def pearson(a, b):
    x, y = _paired(a, b)
    return float(stats.pearsonr(x, y).statistic)


def sign_agreement(estimate, reference, top=None):
    """Fraction of matching signs, optionally over the ``top`` largest ``|reference|``."""
    x, y = _paired(estimate, reference)
    order = np.argsort(-np.abs(y), kind="stable")
    if top is not None:
        order = order[:top]
    return float(np.mean(np.sign(x[order]) == np.sign(y[order])))


def auc(scores, positive):
    """ROC AUC of ``scores`` ranking ``positive`` examples above the rest (ties count half)."""
    scores = np.asarray(scores, float)
    positive = np.asarray(positive, bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both positive and negative examples")
    ranks = stats.rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def correlation_summary(estimate, reference):
    return {
        "n": len(_paired(estimate, reference)[0]),
        "spearman": spearman(estimate, reference),
        "pearson": pearson(estimate, reference),
        "sign_agreement": sign_agreement(estimate, reference),
    }

"""Token-diversity metric for ranking feature teachers.

Per sample: take all ordered pairwise cosines between the K tokens, min-max
normalize them into [0, 1] within the sample, and average. The corpus
diversity is one minus the mean of those per-sample similarities; higher
means the teacher separates image regions more strongly.

Degenerate rule: when every off-diagonal cosine is equal (min = max), the
normalization is undefined and the shared raw cosine, clamped to [0, 1], is
used instead - so identical tokens score similarity 1 and mutually
orthogonal tokens score 0.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class DiversityReport:
    per_sample: list  # sim_n in [0, 1], one per sample
    diver: float
    n_samples: int
    tokens_per_sample: int


def _unit_rows(y):
    y = np.asarray(y, dtype=np.float64)
    norms = np.linalg.norm(y, axis=1)
    if np.any(norms == 0):
        raise NumericError("cosine similarity undefined for a zero-norm token")
    return y / norms[:, None]


def pairwise_cosine(y):
    """Full K x K cosine matrix; symmetric, unit diagonal."""
    if y.shape[0] < 2:
        raise ConfigError("pairwise cosine needs at least two tokens")
    u = _unit_rows(y)
    return u @ u.T


def sample_similarity(y):
    """Mean min-max-normalized off-diagonal cosine for one sample."""
    c = pairwise_cosine(y)
    k = c.shape[0]
    off = c[~np.eye(k, dtype=bool)]  # K(K-1) ordered pairs, row-major
    lo, hi = off.min(), off.max()
    if hi == lo:
        return min(max(float(lo), 0.0), 1.0)
    normed = (off - lo) / (hi - lo)
    # exact ordered summation keeps the mean inside [0, 1]
    return math.fsum(normed) / len(normed)


def corpus_diversity(samples):
    """Diversity report over a corpus of TeacherFeatures."""
    if not samples:
        raise ConfigError("diversity needs a non-empty corpus")
    ks = {s.n_tokens for s in samples}
    if len(ks) != 1:
        raise ConfigError(f"samples disagree on token count: {sorted(ks)}")
    k = ks.pop()
    if k < 2:
        raise ConfigError("diversity needs at least two tokens per sample")
    sims = [sample_similarity(s.tokens) for s in samples]
    diver = 1.0 - math.fsum(sims) / len(sims)
    return DiversityReport(per_sample=sims, diver=diver,
                           n_samples=len(sims), tokens_per_sample=k)

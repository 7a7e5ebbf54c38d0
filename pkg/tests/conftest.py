"""Shared fixtures: a tiny hand-checkable sample and random-sample makers."""

import numpy as np
import pytest

from dosesens.pairs import sample_from_arrays
from dosesens.scores import ScoreSpec, score


@pytest.fixture
def three_pairs():
    """Three concordant pairs with distinct gaps; checkable by hand.

    Higher-dose units have outcomes 5, 7, 6 against 3, 4, 2, so outcome
    differences are 2, 3, 4 and dose gaps are 1, 2, 4.  Under Wilcoxon
    scoring t = 1 + 2 + 3 = 6, the largest reachable value, so the exact
    randomization p-value at no bias is 1/8.
    """
    z1 = np.array([2.0, 1.0, 0.0])
    z2 = np.array([1.0, 3.0, 4.0])
    y1 = np.array([5.0, 4.0, 2.0])
    y2 = np.array([3.0, 7.0, 6.0])
    return sample_from_arrays(z1, z2, y1, y2)


@pytest.fixture
def three_pairs_scored(three_pairs):
    return score(three_pairs, ScoreSpec(kind="wilcoxon"))


def random_sample(rng, n, effect=0.0, noise_sd=1.0):
    """Continuous doses and outcomes; no ties with probability one."""
    z1 = rng.uniform(0.0, 3.0, n)
    z2 = z1 + rng.uniform(0.25, 2.0, n) * rng.choice([-1.0, 1.0], n)
    y1 = effect * z1 + rng.normal(0.0, noise_sd, n)
    y2 = effect * z2 + rng.normal(0.0, noise_sd, n)
    return sample_from_arrays(z1, z2, y1, y2)

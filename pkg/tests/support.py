"""Shared fixtures data for the test modules."""

import numpy as np

from regalign.correspondence import CorrespondencePair, CorrespondenceSet
from regalign.geometry import PointSet

TRIANGLE_X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
TRIANGLE_Y = np.array([[0.0, 0.0], [-1.0, 0.0], [0.0, 2.0]])
TOY_OPTIMUM = 3.7185

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES = []


def toy_problem():
    sets = [PointSet(TRIANGLE_X, id=0), PointSet(TRIANGLE_Y, id=1)]
    k = np.arange(3)
    corr = CorrespondenceSet(2, [CorrespondencePair(0, 1, np.column_stack([k, k]))])
    return sets, corr


def index_pairs(n):
    k = np.arange(n)
    return np.column_stack([k, k])

"""Archived reference numbers for the repository's standard audit instance.

The instance is the smallest nontrivial adjacent pair: n = 3 blocks, stash
probability 1/2, query sequences (1, 2, 1) and (1, 3, 1). Exact enumeration
gives a worst per-transcript probability ratio of exactly 16 (the changed
position contributes a factor 4 from the overwrite marginal and 4 from the
download law), so the tightest pure budget is ln 16. The composite factor
bound for one changed position with no later same-block queries is
(n^2/p) * (n/p) = 108, and the general three-position bound is 3 ln 108;
the measured value sits far inside both.
"""

from fractions import Fraction

REFERENCE_N = 3
REFERENCE_P = Fraction(1, 2)
REFERENCE_QUERIES = (1, 2, 1)
REFERENCE_QUERIES_ADJ = (1, 3, 1)

# Exact worst-case per-transcript ratio between the two sequences.
REFERENCE_MAX_RATIO = Fraction(16)

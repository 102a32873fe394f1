import numpy as np


def pairwise_sum(terms):
    """
    Sum a list of equally shaped arrays with a fixed-order pairwise tree.

    The grouping depends only on len(terms), so results are bit-stable across
    runs. Summing 2**k identical copies is exact.
    """
    terms = [np.asarray(term, dtype=np.float64) for term in terms]
    if not terms:
        raise ValueError("pairwise_sum needs at least one term")
    while len(terms) > 1:
        paired = [terms[i] + terms[i + 1] for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            paired.append(terms[-1])
        terms = paired
    return terms[0]

"""Palette/proportion tables for the discretization recovery tests.

Each entry gives K entity colors and their pixel-count proportions.
The sets are constructed so the k-means inertia curve is near-linear
below the true K with its single curvature spike at K: merge costs
between color groups are balanced level by level, which is what the
max-second-difference elbow needs to identify K reliably under the
sigma=0.02 noise of the recovery test. Colors keep >= 0.3 distance
pairwise and from black, matching the palette invariant.
"""

import numpy as np

CASES = {
    2: (np.array([
        [0.165713, 0.499350, 0.591349],
        [0.075820, 0.183133, 0.885390],
    ]), np.array([0.577592, 0.422408])),
    3: (np.array([
        [0.950000, 0.451172, 0.547400],
        [0.486960, 0.071981, 0.665001],
        [0.608600, 0.182717, 0.248064],
    ]), np.array([0.149015, 0.227265, 0.623720])),
    4: (np.array([
        [0.248631, 0.691366, 0.187451],
        [0.281925, 0.053071, 0.651281],
        [0.050000, 0.820387, 0.710239],
        [0.899559, 0.847928, 0.692997],
    ]), np.array([0.406170, 0.133122, 0.347530, 0.113178])),
    5: (np.array([
        [0.608647, 0.051221, 0.716483],
        [0.221279, 0.443732, 0.159847],
        [0.883752, 0.950000, 0.050000],
        [0.634038, 0.560398, 0.493031],
        [0.356577, 0.803754, 0.764098],
    ]), np.array([0.054083, 0.061605, 0.040140, 0.761352, 0.082820])),
    6: (np.array([
        [0.392195, 0.779728, 0.114648],
        [0.861619, 0.352328, 0.358411],
        [0.315095, 0.050000, 0.256520],
        [0.553236, 0.534405, 0.842567],
        [0.050000, 0.500088, 0.589567],
        [0.418319, 0.387337, 0.490517],
    ]), np.array([0.041520, 0.046224, 0.059933, 0.070260, 0.070824, 0.711239])),
    7: (np.array([
        [0.164917, 0.801483, 0.202612],
        [0.833406, 0.645218, 0.050000],
        [0.521345, 0.609934, 0.950000],
        [0.624543, 0.939294, 0.334357],
        [0.525915, 0.568168, 0.365008],
        [0.402439, 0.168143, 0.182086],
        [0.950000, 0.334252, 0.488331],
    ]), np.array([0.076678, 0.096486, 0.050354, 0.083877, 0.570924, 0.072199, 0.049482])),
    8: (np.array([
        [0.770049, 0.674996, 0.809870],
        [0.219137, 0.528788, 0.436850],
        [0.757186, 0.394416, 0.554077],
        [0.287379, 0.950000, 0.672205],
        [0.552505, 0.135182, 0.224679],
        [0.551866, 0.604628, 0.367038],
        [0.477385, 0.506563, 0.665434],
        [0.237657, 0.241725, 0.860724],
    ]), np.array([0.098210, 0.089447, 0.078928, 0.058526, 0.042187, 0.084552, 0.464092, 0.084058])),
}


def exact_count_map(K, weights, shape, rng):
    """Random entity layout with exact per-id pixel counts."""
    n = int(np.prod(shape))
    counts = np.floor(weights * n).astype(int)
    frac = weights * n - counts
    for i in np.argsort(-frac)[: n - counts.sum()]:
        counts[i] += 1
    ids = np.repeat(np.arange(1, K + 1), counts)
    return rng.permuted(ids).reshape(shape)

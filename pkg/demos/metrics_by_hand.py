"""The clustering scores on inputs small enough to check by hand."""
import itertools

import numpy as np

from hmimvc.evaluation import acc, ari, assignment_cost, contingency, hungarian, nmi

cost = np.array([[4.0, 1.0, 3.0],
                 [2.0, 0.0, 5.0],
                 [3.0, 2.0, 2.0]])
perm = hungarian(cost)
print("hungarian", perm, "cost", assignment_cost(cost, perm))
# every permutation, for comparison
for p in itertools.permutations(range(3)):
    print("  ", p, assignment_cost(cost, p))

true, found = [0, 0, 1, 1], [0, 1, 0, 0]
print(contingency(true, found))  # rows: true classes, cols: clusters
print("acc", acc(true, found))  # best map: cluster 0 -> class 1, cluster 1 -> class 0
print("nmi", nmi([0, 0, 1, 1], [0, 1, 1, 1]))
print("ari", ari([0, 0, 1, 1], [0, 1, 0, 1]))  # worse than chance
print("relabelled copy", nmi([0, 1, 2], [7, 3, 5]), acc([0, 1, 2], [7, 3, 5]), ari([0, 1, 2], [7, 3, 5]))

"""Walk through one half-graph pair from a single molecule.

Run with ``python3 demos/01_half_graphs.py``. Nothing is trained here.
"""
# %%
import os

import numpy as np

from halfgraph.data import parse_tu
from halfgraph.graph import disjoint_union
from halfgraph.phd import assemble, border_range, make_pair, split_at

mutag = parse_tu(os.path.join(os.path.dirname(__file__), "..", "data", "MUTAG"), "MUTAG")
g = mutag.graphs[0]
print(f"graph 0: {g.num_nodes} nodes, {g.num_edges} edges, label {g.label}")

# %% The border is drawn from the middle third of the node order.
lo, hi = border_range(g.num_nodes)
print(f"admissible borders: {lo}..{hi}")
first, second = split_at(g, lo)
dropped = g.num_edges - first.num_edges - second.num_edges
print(f"split at {lo}: {first.num_nodes}+{second.num_nodes} nodes, {dropped} crossing edges dropped")

# %% A pair keeps the second half (label 1) or borrows one from another molecule (label 0).
rng = np.random.default_rng(4)
partner = lambda r: (1, mutag.graphs[1])
for _ in range(4):
    pair = make_pair(g, partner, rng, source_id=0)
    print(f"border {pair.border}: halves of {pair.first.num_nodes} and {pair.second.num_nodes} nodes, label {pair.label}")

# %% Assembly appends one collection node that every real node points to.
for direction in ("uni", "bi"):
    inst = assemble(pair, direction)
    print(f"{direction}: {inst.num_nodes} nodes, {len(inst.virtual_src)} virtual edges, segments {np.bincount(inst.node_segments)}")

# %% Many instances pack into one disjoint-union batch.
batch = disjoint_union([assemble(make_pair(g, partner, rng)) for _ in range(8)])
print(f"batch: {batch.num_graphs} instances, {batch.num_nodes} nodes, labels {batch.labels.tolist()}")

# %% [markdown]
# # Recursive k-means
#
# Each user's events are split until every cluster is tighter than the
# dispersion cap.  k at each split is chosen by mean silhouette.

# %%
import numpy as np

from actloc.geo import GeoPoint, Projection
from actloc.kmeans import filter_by_size, kmeans, recursive_kmeans, select_k
from actloc.synth import AnchorSpec, SynthUserSpec, generate

anchors = [AnchorSpec(GeoPoint(1.300, 103.800), 0.5, 60),
           AnchorSpec(GeoPoint(1.312, 103.812), 0.3, 60),
           AnchorSpec(GeoPoint(1.290, 103.830), 0.2, 60)]
tr = generate([SynthUserSpec("demo", anchors, 120, en_route_fraction=0.1, seed=5)])[0][0]
xy = Projection(GeoPoint(1.30, 103.81)).forward(tr.lat, tr.lon)

# %%
best = select_k(xy, seed=0)
print("silhouette picks k =", best.k_selected)

res = kmeans(xy, 3, seed=0)
print("objective trace:", np.round(res.objective_history[:5], 1), "...", round(res.objective, 1))

# %%
clusters = recursive_kmeans(xy, 200.0, seed=0)
print(len(clusters), "clusters, sizes", sorted((c.size for c in clusters), reverse=True))
kept = filter_by_size(clusters, 4)
print(len(kept), "with at least 4 members")

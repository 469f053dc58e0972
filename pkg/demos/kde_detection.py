# %% [markdown]
# # Density-peak detection
#
# A user with a dominant home anchor, a work anchor and a rarely visited
# third place.  Peaks of the kernel density become clusters; the contribution
# threshold decides which ones count as activity locations.

# %%
import numpy as np

from actloc.geo import GeoPoint
from actloc.kde import KdeConfig, detect_kde, filter_by_contribution
from actloc.synth import AnchorSpec, SynthUserSpec, generate

anchors = [AnchorSpec(GeoPoint(1.300, 103.800), 0.6, 50),
           AnchorSpec(GeoPoint(1.320, 103.850), 0.32, 50),
           AnchorSpec(GeoPoint(1.350, 103.760), 0.08, 50)]
traces, truth = generate([SynthUserSpec("demo", anchors, 150, en_route_fraction=0.1, seed=11)])
tr = traces[0]
print(len(tr), "events")

# %%
cfg = KdeConfig()
clusters = detect_kde(tr.lat, tr.lon, cfg)
for c in clusters:
    print(f"peak ({c.location.lat:.5f}, {c.location.lon:.5f})  members {c.n_members:3d}  contribution {c.contribution:.3f}")

# %% [markdown]
# Raising the threshold can only remove clusters.

# %%
for theta in (0.05, 0.10, 0.20):
    print(theta, len(filter_by_contribution(clusters, theta)))

# %% [markdown]
# Bandwidth controls how far apart two anchors must be to stay separate.

# %%
for h in (100.0, 200.0, 800.0, 2000.0):
    n = len(detect_kde(tr.lat, tr.lon, KdeConfig(bandwidth_h=h)))
    print(f"h={h:6.0f} m  peaks {n}")

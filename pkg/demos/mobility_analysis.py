# %% [markdown]
# # From clusters to mobility statistics
#
# Cluster-count distribution, pairwise cluster distances with a KS
# comparison, and a zone-to-zone transition matrix on a small synthetic
# population.

# %%
import numpy as np

from actloc import pipeline
from actloc.analysis import (aggregate_od, cluster_count_distribution, compare_samples, extract_transitions,
                             label_events, pairwise_distances)
from actloc.geo import GeoPoint, ZoneMap, ZonePolygon
from actloc.synth import generate, make_corpus

traces, truth = generate(make_corpus(200, 4))
cfg = pipeline.load_config(None, {"bbox_mode": "none", "threads": 1})
results = pipeline.cluster_all(traces, cfg)
sets = pipeline.cluster_sets(results, cfg)

# %%
print("clusters per user:", cluster_count_distribution(sets))

# %%
detected = [s.meters for s in pairwise_distances(sets)]
true = [s.meters for s in pairwise_distances(truth.anchors)]
rep = compare_samples(detected, true)
print(f"{len(detected)} detected vs {len(true)} true pairs  KS D={rep.ks_d:.3f} p={rep.ks_p:.3f}")

# %% [markdown]
# Transitions between clusters, aggregated over a 3x3 grid of zones.  Each
# user counts at most once per zone pair.

# %%
lat = np.concatenate([t.lat for t in traces])
lon = np.concatenate([t.lon for t in traces])
lat_e = np.linspace(lat.min(), lat.max() + 1e-6, 4)
lon_e = np.linspace(lon.min(), lon.max() + 1e-6, 4)
zm = ZoneMap([ZonePolygon(f"z{i}{j}", f"z{i}{j}", (GeoPoint(lat_e[i], lon_e[j]), GeoPoint(lat_e[i + 1], lon_e[j]),
                                                   GeoPoint(lat_e[i + 1], lon_e[j + 1]), GeoPoint(lat_e[i], lon_e[j + 1])))
              for i in range(3) for j in range(3)])
per_user, locs = {}, {}
for tr, r in zip(traces, results):
    cl = pipeline.filtered(r, cfg)
    per_user[tr.user_id] = extract_transitions(label_events(len(tr), cl))
    locs[tr.user_id] = [c.location for c in cl]
od = aggregate_od(per_user, locs, zm)
print(od.zone_ids)
print(od.counts)

# %% [markdown]
# # Projection, distances and zones
#
# Local equirectangular coordinates are accurate to well under a percent at
# city scale, which is all the clustering code needs.

# %%
import numpy as np

from actloc.geo import GeoPoint, Projection, ZoneMap, assign_zone, haversine_m, local_distance_m, project, square_zone

origin = GeoPoint(1.30, 103.80)
proj = Projection(origin)
east = GeoPoint(1.30, 103.85)
print("projected:", project(east, proj))
print("haversine  %.2f m" % haversine_m(origin, east))
print("local      %.2f m" % local_distance_m(origin, east))

# %% [markdown]
# Relative error of the projection as distance grows.

# %%
for km in (1, 10, 30, 60):
    b = GeoPoint(1.30 + km / 111.2 / np.sqrt(2), 103.80 + km / 111.2 / np.sqrt(2))
    d_true = haversine_m(origin, b)
    q = proj.forward(b.lat, b.lon)
    print(f"{km:3d} km  rel err {abs(np.hypot(*q) - d_true) / d_true:.2e}")

# %% [markdown]
# Adjacent square zones: a point on the shared edge belongs to exactly one.

# %%
zm = ZoneMap([square_zone("west", 1.30, 103.70, 0.1), square_zone("east", 1.30, 103.80, 0.1)])
for p in (GeoPoint(1.35, 103.75), GeoPoint(1.35, 103.80), GeoPoint(1.35, 103.95)):
    print(p, "->", assign_zone(zm, p))

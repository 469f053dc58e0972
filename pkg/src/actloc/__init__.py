"""Activity-location detection from sparse geo-tagged event streams.

Two per-user detectors (recursive k-means and fixed-bandwidth KDE peaks) plus
the analytics built on their output: cluster counts, separation distances,
zone shares and zone-to-zone transition matrices.
"""

from .errors import (ActlocError, EmptyStatisticsError, FormatError, GridTooLargeError, InvalidInputError,
                     UndefinedStatisticError)
from .geo import (BoundingBox, GeoPoint, ProjectedPoint, Projection, ZoneMap, ZonePolygon, assign_zone,
                  contains, euclidean_m, haversine_m, load_zonemap, point_in_polygon, project, unproject)
from .events import Event, UserTrace, DatasetStats, ingest, filter_min_events, filter_bbox, inter_event_stats
from .kmeans import silhouette_mean, select_k, recursive_kmeans, filter_by_size
from .kde import (KdeConfig, KdeGrid, KdeCluster, evaluate_kde, find_peaks, assign_events,
                  filter_by_contribution, cluster_user_kde, detect_kde)

__version__ = "0.1.0"

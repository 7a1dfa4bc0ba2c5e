"""Part-aligned pooling, occlusion-aware retrieval and pseudo-labelling for person re-identification."""
from .data_model import (
    KeypointSet,
    LabelMap,
    ManifestEntry,
    Tensor3,
    load_keypoints,
    load_manifest,
    read_tensor,
    write_tensor,
)
from .pooling import PartFeatureSet, global_pool, pap_pool, pcb_pool
from .regions import RegionBand, RegionConfig, map_y_to_row, pap_regions, pcb_stripes
from .retrieval import (
    EmbeddingSet,
    cos_dist,
    distance_matrix,
    evaluate,
    part_similarity_matrix,
    query_gallery_distance,
)

__version__ = "0.1.0"

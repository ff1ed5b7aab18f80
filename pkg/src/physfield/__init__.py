"""physfield: dense 3D physical-property fields from posed RGB-D views.

The pipeline backprojects depth maps into a source point cloud, fuses
vision-language patch embeddings into each point, asks a language model
for candidate materials with property values, regresses per-point values
through a similarity-weighted softmax over the material dictionary, and
aggregates object mass by thickness-weighted surface integration bounded
by depth carving.
"""

from .fusion import (FeaturePointCloud, FusionConfig, fuse_features,
                     pca_colorize, visibility_test)
from .mass import (CarveResult, MassConfig, MassEstimate, carve_volume,
                   clip_mass, integrate_mass, integrate_mass_no_thickness)
from .materials import (MaterialDictionary, MaterialEntry, ValueRange,
                        combine_shore_scales, estimate_thickness,
                        parse_material_response, propose_materials,
                        select_canonical_view)
from .metrics import (MetricsReport, aggregate_report, compute_metrics,
                      pairwise_relationship_accuracy)
from .pipeline import PipelineConfig
from .points import (SamplingConfig, SourcePointCloud, remove_outliers,
                     sample_source_points, voxel_downsample)
from .regression import (KernelConfig, PropertyField, build_field,
                         kernel_regress, query_field, segment_material,
                         similarity_weights)
from .scene import (Camera, Frame, SceneBundle, backproject,
                    load_scene_bundle, normalize_poses, project_point)

__version__ = "0.1.0"

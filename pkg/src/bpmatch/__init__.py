"""Point-cloud correspondence toolkit.

Putative descriptor matching, a pairwise graphical model over matches
solved by loopy belief propagation to reject outliers, rigid registration
via Kabsch and RANSAC, and a synthetic benchmark harness that sweeps the
outlier ratio.
"""

from .bench import (SceneConfig, SweepResult, SyntheticScene, emit_report,
                    generate_scene, load_report, run_sweep)
from .config import PipelineConfig
from .descriptors import (Descriptor, DescriptorSet, describe_cloud,
                          load_descriptors, save_descriptors,
                          stand_in_descriptor)
from .geometry import (NeighborIndex, PointCloud, RigidTransform,
                       apply_transform, build_index, random_transform,
                       rotation_angle, rotation_from_axis_angle)
from .inference import (BeliefState, ConvergenceReport, Message,
                        compatibility_matrix, compute_marginals,
                        exact_marginals, filter_matches, format_marginals,
                        init_state, run_lbp, update_message)
from .matchgraph import (MatchGraph, NeighborKind, build_graph, classify_pair,
                         dump_graph, select_lambda)
from .matching import (Correspondence, ObservationMessage, mutual_best_match,
                       observation_from_distance, ratio_test_match,
                       uniform_observation)
from .registration import (MatchMetrics, RansacConfig, RansacResult, kabsch,
                           match_metrics, median_point_distance,
                           ransac_register, transform_difference)

__version__ = "0.1.0"

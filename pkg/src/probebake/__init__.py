"""Per-mesh light probe baking: placement, least-squares fitting, encoding
and evaluation of spherical-harmonic irradiance probes."""

from .association import Association, load_association, save_association
from .baker import FitSystem, ProbeBaker, ProbeSet, assemble, bake, solve
from .codec import Probemap, decode, encode, load_pmap, pack_probemap, save_pmap, tod_interpolate
from .config import PipelineConfig, load_config
from .distribution import ProbeDistributor, build_visibility_graph, hybrid_distance, k_medoids
from .evaluate import EvalReport, mrmse, reconstruct, render_image
from .mesh import Mesh, blue_noise_sample, build_butterfly_pairs, load_mesh, surface_samples
from .radiance import Light, MeshInstance, RadianceTable, Scene, build_radiance_table
from .sh import DirectionSet, make_direction_set

__version__ = "0.1.0"

"""Numerical workbench for isoperimetric sets on a weighted flat torus and
for slope-based Laplacian comparison and deformation bounds."""

from .construction import (BallSystem, Profile, WeightedTorus, build_packing, profile_phi,
                           uniform_torus, verify_phi_gap, verify_separation)
from .dcalc import (MCPParams, check_dcalc_rules, check_deformation, check_laplacian_bound, d_minus,
                    d_plus, mcp_constant, mollifier_family, sphere_mass_scan)
from .estimators import CroftonPerimeter, GreedyBallPacking
from .perimeter import RasterSet, coarea_check, perimeter_raster
from .rearrangement import cascade_merge, schwarz_rearrange
from .torus import ScalarField, TorusPoint, distance_field, slope_field

__version__ = "0.1.0"

__all__ = ["BallSystem", "CroftonPerimeter", "GreedyBallPacking", "MCPParams", "Profile", "RasterSet",
           "ScalarField", "TorusPoint", "WeightedTorus", "build_packing", "cascade_merge",
           "check_dcalc_rules", "check_deformation", "check_laplacian_bound", "coarea_check", "d_minus",
           "d_plus", "distance_field", "mcp_constant", "mollifier_family", "perimeter_raster",
           "profile_phi", "schwarz_rearrange", "slope_field", "sphere_mass_scan", "uniform_torus",
           "verify_phi_gap", "verify_separation"]

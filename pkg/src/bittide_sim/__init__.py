"""Simulator and analysis toolkit for bittide-style logical clock networks.

Covers the directed-graph incidence machinery, spectral analysis of the
buffer-flow Laplacian, a fluid-model simulator, the pulsed buffer-centering
controller, and a frame-accurate integer oracle for cross-validation.
"""

from .controller import (
    CenteringReport,
    ControllerState,
    FrameRotationLaw,
    PhaseRecord,
    ProportionalLaw,
    RotationConfig,
    ZeroLaw,
    frame_rotation_control,
    proportional_control,
    pulse_duration,
    run_centering,
    sign_deadzone,
    single_pulse_map,
)
from .dynamics import ModelParams, SystemState, Trace, buffer_occupancy, measurement, simulate
from .errors import (
    BittideError,
    ConfigError,
    InternalError,
    NumericsError,
    ScheduleError,
    SpectralError,
    TopologyError,
)
from .frame_oracle import compare_fluid_oracle, oracle_simulate
from .graph import (
    DirectedGraph,
    IncidenceSet,
    SmithPartition,
    SpanningTree,
    build_incidence,
    consistent_ordering,
    cycle_basis,
    integer_determinant,
    is_strongly_connected,
    load_graph,
    outward_spanning_tree,
    precedes,
    smith_partition,
    tree_edge_into,
    validate_ordering,
)
from .spectral import (
    SpectralData,
    closed_form_theta,
    laplacian,
    metzler_left_eigenvector,
    projector_and_ginverse,
    spectral_data,
    spectral_gap,
    steady_state,
)

__version__ = "0.1.0"

"""dynetid: simulation and module identification for linear dynamic networks.

A network couples scalar node signals through proper rational modules in the
delay operator, driven by filtered white noise and user excitations.  This
package simulates such networks, answers the structural questions that decide
which signals must be measured (predictor-input selection, confounding
disturbances, immersion), estimates individual modules with the direct,
two-stage/projection and instrumental-variable methods, and checks whether a
parametrized model set is network identifiable.
"""

from .errors import (
    AlgebraicEliminationFailure,
    DegreeCapExceeded,
    DelayConditionViolated,
    DivergenceDetected,
    DynetidError,
    ExternalPathViolation,
    IllPosedReference,
    ImproperResult,
    MissingSignal,
    NoFeasibleSelection,
    NotWellPosed,
    PoleAtPoint,
    RankDeficientCorrelationBlock,
    RankDeficientRegressor,
    SchemaError,
    SingularAtPoint,
)
from .transfer import TransferFunction, evaluate, feedback, inv
from .network import (
    DynamicNetwork,
    ValidationReport,
    load_network,
    net_hash,
    network_from_dict,
    network_to_dict,
    network_transfer,
    save_network,
    validate_network,
)
from .graph import (
    ExcitationSource,
    ImmersedNetwork,
    MethodSets,
    NoiseSource,
    PredictorSelection,
    check_input_selection,
    confounding_variables,
    correlated_nodes,
    has_path,
    immerse,
    method_sets,
    parents,
    select_inputs,
)
from .sim import (
    ExcitationSpec,
    Prbs,
    SignalDataset,
    WhiteNoise,
    ZeroSignal,
    add_sensor_noise,
    cross_correlation,
    load_dataset,
    save_dataset,
    simulate,
    simulate_immersed,
)
from .estimate import (
    EstimationPlan,
    EstimationResult,
    InputOrders,
    IvSpec,
    MisoModelSpec,
    NoiseOrders,
    direct_miso,
    iv_correlation,
    module_coefficient_error,
    plan_from_dict,
    project_signals,
    residual_target,
    run_plan,
    two_stage,
)
from .identifiability import (
    IdentifiabilityReport,
    ModelSetSpec,
    Witness,
    check_identifiability,
    count_condition,
    load_model_set,
    model_set_from_dict,
    rank_condition,
)

__version__ = "0.1.0"

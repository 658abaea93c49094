from enum import Enum


class Region(Enum):
    FREE = "free"
    MATRIX = "matrix"


class BoundaryTag(Enum):
    GAMMA_F = "Gamma_f"  # outer boundary of the free-flow layer
    GAMMA_M = "Gamma_m"  # outer boundary of the porous matrix
    GAMMA_I = "Gamma_i"  # free/matrix interface


class ElementKind(Enum):
    P1 = "P1"
    P2 = "P2"
    P2_VECTOR = "P2-vector"


class Field(Enum):
    U_F = "u_f"
    P_F = "P_f"
    U_M = "u_m"
    P_M = "P_m"
    THETA = "theta"
    MU = "mu"


# Fixed global ordering of the unknown fields.
FIELD_ORDER = (Field.U_F, Field.P_F, Field.U_M, Field.P_M, Field.THETA, Field.MU)
MOMENTUM_FIELDS = (Field.U_F, Field.P_F, Field.U_M, Field.P_M, Field.MU)


class NormKind(Enum):
    L2 = "L2"
    H1_SEMI = "H1-semi"
    L4 = "L4"
    L6 = "L6"
    W16_SEMI = "W16-semi"
    INTERFACE_L2 = "interface-L2"


class CoefficientKind(Enum):
    CONSTANT = "constant"
    AFFINE_CLAMPED = "affine_clamped"
    TANH = "tanh"
    SPLINE = "spline"


class ClampMode(Enum):
    """Which subdomain a manufactured-solution run verifies.

    NONE is the coupled problem. FREE and MATRIX replace the interface
    conditions by exact-trace Dirichlet data on Gamma_i.
    """
    NONE = "none"
    FREE = "free"
    MATRIX = "matrix"


class InterfaceLaw(Enum):
    LIONS = "lions"
    LINEAR = "linear"


class LinearSolverKind(Enum):
    GMRES_ILU = "gmres_ilu"
    DIRECT = "direct"


class ExperimentKind(Enum):
    RUN = "run"
    XI_SWEEP = "xi-sweep"
    DT_REFINE = "dt-refine"
    UNIQUENESS = "uniqueness"
    MMS = "mms"

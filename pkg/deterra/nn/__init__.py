from .kan import Kan, KanSpec, bspline_basis, kan_forward
from .mlp import Mlp, MlpSpec, mlp_forward, width_for_parity
from .params import ParamVector, backward, finite_difference_check, kan_backward, mlp_backward
from .scaler import Scaler, Standardizer, fit_scaler
from .train import RegressorFit, seeded_init, train_regressor

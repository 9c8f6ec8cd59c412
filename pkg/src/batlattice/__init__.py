"""Transducer loss kernels with CIF-selected band restriction."""

__version__ = "0.1.0"

from .band import (  # noqa: F401
    BandWindow,
    bat_loss,
    bat_loss_bruteforce,
    build_window,
    gather_band,
    scatter_band,
)
from .cif import (  # noqa: F401
    CifAlignment,
    CifParams,
    CifWeights,
    FiredEmbeddings,
    cif_backward,
    cif_boundary,
    cif_ce_loss,
    cif_fire,
    cif_predict_weights,
    cif_quantity_loss,
    cif_scale,
    clamp_weights,
)
from .numerics import NEG_INF, log_softmax, log_sum_exp, make_rng  # noqa: F401
from .rnnt import (  # noqa: F401
    LossResult,
    rnnt_backward,
    rnnt_forward,
    rnnt_loss,
    rnnt_loss_bruteforce,
)
from .tensorio import read_tensor, write_tensor  # noqa: F401

from .ea_cgmm import EaCgmm, ea_cgmm_infer
from .gmm import EmResult, Gmm, em_fit, gmm_log_likelihood, gmm_sample, gmm_sample_n
from .vae_chmdn import VaeChmdn, VaeChmdnSpec, generate_gmm, vae_chmdn_train
from .virtual import (
    FidelityReport,
    TransitionModelBundle,
    VirtualCmdp,
    fit_virtual_cmdp,
    load_virtual,
    save_virtual,
)

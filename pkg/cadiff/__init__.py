from .tensor import Tensor, backward, forward, no_grad
from .layers import ParamSet
from .optim import adam_step
from .checkpoint import save_params, load_params_into
from .transport import w2_diag_gaussian, wp_discrete, w1_dual_check, wp_empirical_1d
from .diffusion import (
    NoiseSchedule,
    ScoreNet,
    make_schedule,
    forward_sample,
    invert_delta,
    adm_loss,
    denoise,
    fit_score_net,
)
from .bisim import (
    exact_bisim,
    diameter_bound,
    verify_value_bound,
    verify_contraction,
    verify_model_error_bound,
    check_metric_axioms,
    loss_bs,
    loss_br,
)
from .mdp_io import read_mdp, write_mdp
from .encoder import Encoder, encode, sample_state
from .envs import NoisyPointMass, Trajectory, random_finite_mdp, perturb_mdp, make_finite_pomdp
from .agent import SacNets, select_action, sac_update
from .replay import ReplayBuffer
from .run_config import RunConfig, SweepGrid, parse_config_file, parse_grid_file
from .training import train, evaluate, latest_checkpoint, read_metrics
from .verification import run_suite, verify_mdp
from .sweep import sweep, ablation_study
from .models import (
    DiagGaussian,
    DiscreteDist,
    FiniteMDP,
    BisimMetric,
    EnvConfig,
    EnvKind,
    ObsMode,
    NoiseSurrogate,
    VerifySuite,
    SuiteReport,
    EvalReport,
    SweepReport,
    AblationReport,
)

RUN_DIR_DEFAULT = "runs/cadiff"
RUN_CONFIG_SNAPSHOT_FILE = "run_config.json"
METRICS_FILE = "metrics.jsonl"
CHECKPOINT_DIR = "checkpoints"
CHECKPOINT_FILE_SUFFIX = ".cdf"

CHECKPOINT_MAGIC = b"CDF1"
CHECKPOINT_VERSION = 1

# training hyperparameters, keyed like the run config file
SIZE_OF_REPLAY_MEMORY = 1_000_000
NUMBER_OF_SAMPLES_FOR_EACH_UPDATE = 64
DISCOUNT_FACTOR = 0.99
TARGET_UPDATE_FRACTION = 0.005
LEARNING_RATE_POLICY_AND_VALUE = 3e-4
LEARNING_RATE_ENTROPY_COEFFICIENT = 3e-4
TARGET_ENTROPY_IN_SAC = 0.2
LEARNING_RATE_DIFFUSION = 3e-4
LEARNING_RATE_BISIMULATION = 3e-4
TOTAL_DIFFUSION_STEP = 500
BETA_SCHEDULE = "linear"
NOISE_INTENSITY = 2

BETA_MIN = 1e-4
BETA_MAX = 2e-2
EARLY_STOPPING_STEP = 1
GUIDANCE_WEIGHT = 1.0
GUIDANCE_PROBABILITY = 0.5
STEP_EMBEDDING_DIM = 32

HIDDEN_WIDTH = 64
ENCODER_HIDDEN_WIDTH = 64
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
HISTORY_WINDOW = 8
ADM_TARGET_SAMPLES = 4

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

C_R = 0.4
C_S = 0.5
BISIM_TOLERANCE = 1e-9
BISIM_MAX_ITERATIONS = 10_000

TOTAL_STEPS_DEFAULT = 20_000
STEPS_PER_EPOCH = 1_000
WARMUP_STEPS = 1_000
CHECKPOINT_EVERY = 5_000
EVAL_EPISODES = 5
RETURN_EMA_HALF_LIFE = 10

ABLATION_FLAGS = ["no_bisim", "no_reward_denoise", "no_obs_denoise"]

# NoisyPointMass
POINT_MASS_DT = 0.05
POINT_MASS_K_SPRING = 0.2
POINT_MASS_WORKSPACE_RADIUS = 2.0
POINT_MASS_INIT_RADIUS = 1.5
POINT_MASS_TRANSITION_NOISE_STD = 0.05
POINT_MASS_REWARD_NOISE_FACTOR = 0.1
POINT_MASS_STATE_DIM = 4
POINT_MASS_ACTION_DIM = 2
EPISODE_CAP = 200
PROPORTIONAL_GAINS = (2.0, 2.0)

FINITE_MAX_STATES = 12
FINITE_REWARD_LEVELS = (0.0, 0.5, 1.0)

# noise scale x noise intensity grid
SWEEP_NOISE_SCALES = [0.1, 0.5, 1.0]
SWEEP_NOISE_INTENSITIES = [1, 2, 3]

VERIFY_SUITES = ["wasserstein", "bisim", "theorem1", "corollary1", "diffusion"]
VERIFY_MDP_INSTANCES = 100
VERIFY_MDP_MAX_STATES = 6
VERIFY_MDP_MAX_ACTIONS = 3
VERIFY_GAMMA = 0.3
VERIFY_BOUND_TOLERANCE = 1e-6
VERIFY_PERTURBATION_PAIRS = 50
VERIFY_MASS_SHIFTS = [0.01, 0.05, 0.1]

EXIT_VERIFICATION_FAILURE = 2
EXIT_CONFIG_ERROR = 3

import math

# anchor operating points for every BD-Rate computation
DEFAULT_QPS = (27, 39, 49, 59, 63)
QP_MIN = 0
QP_MAX = 63

# score used for zero-error comparisons; keeps BD-Rate interpolation finite
METRIC_CAP_DB = 100.0

# SMPTE ST 2084 peak, cd/m^2
PQ_PEAK_NITS = 10000.0
# BT.1886 reference white for SDR material, cd/m^2
SDR_WHITE_NITS = 100.0

# CIELAB normalisation used by DE100 and PSNRL100
LAB_NORMALISATION_FACTOR = 100.0

# ITU-T H.Sup15 chroma qp offset model, applied to Cb and Cr alike
CHROMA_OFFSET_C = 1.0
CHROMA_OFFSET_K = -0.46
CHROMA_OFFSET_L = 9.26
CHROMA_OFFSET_MIN = -12
CHROMA_OFFSET_MAX = 0

# chroma offset slope found optimal for AV1 still images
AV1_CHROMA_OFFSET_K = -0.49

# wPSNR luma weighting: 2^(clip(slope * Y10 + intercept, lo, hi) / 3)
WPSNR_SLOPE = 0.015
WPSNR_INTERCEPT = -7.5
WPSNR_DELTA_MIN = -3.0
WPSNR_DELTA_MAX = 6.0
WPSNR_MID_GRAY_CODE = 500

# MS-SSIM per-scale exponents, finest scale first
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_K1 = 0.01
MS_SSIM_K2 = 0.03
MS_SSIM_SIGMA = 1.5
MS_SSIM_MIN_SIZE = 32

# HDR-VQM similarity transform is defined for Q < ln 3
HDRVQM_Q_LIMIT = math.log(3.0)
# PU-MSE backend scale; an RMSE of 10 PU units maps to Q = 1
HDRVQM_PU_MSE_SCALE = 100.0

LANCZOS_ORDER = 5

# Powell search defaults
POWELL_TOLERANCE = 0.0005
POWELL_MAX_EVALUATIONS = 100
POWELL_MAX_ITERATIONS = 20
POWELL_STEP = 0.1
POWELL_STEP_TOLERANCE = 0.01
INFEASIBLE_PENALTY = 1.0

# mock codec lambda model, lambda ~ A * q_dc^2 with A in [3.2, 4.2]
LAMBDA_A_MIN = 3.2
LAMBDA_A_MAX = 4.2

CACHE_ENV_VAR = "HDRRDO_CACHE"
DEFAULT_CACHE_DIR = ".hdrrdo-cache"

VERSION = "0.1.0"

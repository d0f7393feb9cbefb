import os

DEFAULT_SCHEME = {
    'stepping': 'implicit_y',
    'degree': 3,
    'tolerance': 1e-10,
    'max_iter': 100,
    'damping': 0.5,
    'theta_y': 0.5,
    'rcond': 1e-10,
    'step_guard': 0.5,
    'threads': 1,
}

DEFAULT_SAMPLER = {
    'seed': 7,
    'count': 10_000,
    'y_radius': 3.0,
    'z_radius': 3.0,
    'horizon': 1.0,
    'grid_nodes': 16,
    'closest': 1e-8,
}

DEFAULT_NUMERIC = {
    'T': 1.0,
    'N': 32,
    'M': 10_000,
    'seed': 20240601,
}

MODULUS_NODES = 512
MODULUS_U_MIN = 1e-12
MODULUS_U_MAX = 10.0
ENVELOPE_NODES = 256
HULL_RTOL = 1e-12

OSGOOD_LADDER = tuple(10.0 ** -j for j in range(2, 13))
QUAD_EPSREL = 1e-10
BIHARI_CAP = 1e12

SLACK_TOL = 1e-12
MAX_WITNESSES = 25

BOOTSTRAP_RESAMPLES = 200
BOOTSTRAP_KEY = 0xB0075
BLOCK_PATHS = 256

BDG_OVERRIDE = None

FLOAT_DIGITS = 12
OUTPUT_ROOT = os.environ.get('BSDE_LAB_OUTPUT', 'iodata/exports')

"""
Runtime settings for the crossdiff project.

Every value can be overridden from the environment or a .env file.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Default directory for simulate/sweep artifacts when --out is not given
OUTPUT_DIR = Path(config('CROSSDIFF_OUTPUT_DIR', default='output'))

LOG_LEVEL = config('CROSSDIFF_LOG_LEVEL', default='INFO')

# Sweep worker processes
THREADS = config('CROSSDIFF_THREADS', default=1, cast=int)

# Membership and criterion tolerances
MEMBERSHIP_TOL = config('CROSSDIFF_MEMBERSHIP_TOL', default=1e-12, cast=float)
CONDITION_TOL = config('CROSSDIFF_CONDITION_TOL', default=1e-12, cast=float)

# Newton iteration
NEWTON_TOL = config('CROSSDIFF_NEWTON_TOL', default=1e-10, cast=float)
NEWTON_MAX_ITER = config('CROSSDIFF_NEWTON_MAX_ITER', default=50, cast=int)
NEWTON_MAX_HALVINGS = config('CROSSDIFF_NEWTON_MAX_HALVINGS', default=30, cast=int)

# Time step control
EASY_STEP_ITERS = config('CROSSDIFF_EASY_STEP_ITERS', default=3, cast=int)
EASY_STEPS_TO_GROW = config('CROSSDIFF_EASY_STEPS_TO_GROW', default=5, cast=int)
TAU_MIN_FACTOR = config('CROSSDIFF_TAU_MIN_FACTOR', default=1e-12, cast=float)

# Inward shift applied to initial cells lying on the boundary of the triangle
BOUNDARY_NUDGE = config('CROSSDIFF_BOUNDARY_NUDGE', default=1e-10, cast=float)

# Config documents
SCHEMA_VERSION = 1

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'crossdiff': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

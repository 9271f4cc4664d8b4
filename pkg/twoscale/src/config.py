# --- QUADRATURE ---
GAUSS_ORDER = 3              # points per axis per subcell; |Dg|^p is not polynomial for odd p
MACRO_GAUSS_ORDER = 2        # homogenized macro solve (one cell query per point)
SUBCELLS = 2                 # element subdivisions used by assembly
SUBCELLS_PER_PERIOD = 8      # oscillatory rule: at least this many subcells per eps-period
MAX_SUBDIVISIONS = 4096      # beyond this the oscillation counts as unresolved
MEAN_SAMPLES = 256           # cells per axis for the mean value of V

# --- HYPOTHESES ---
MEAN_TOL = 1e-12
PERIODICITY_TOL = 1e-12
HYPOTHESIS_SAMPLES = 64      # cells per axis sampled before every eps solve

# --- NONLINEAR SOLVER ---
RESIDUAL_TOL = 1e-10
MAX_ITERATIONS = 60
BACKTRACK = 0.5
MIN_STEP = 1.0 / 1024
ARMIJO = 1e-4
PICARD_AFTER = 3             # consecutive rejected Newton trials before the Picard fallback
DELTA_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
MAX_DELTA_INSERTS = 3        # bridges per scheduled stage
PICARD_DELTA = 1.0           # regularization floor of the Picard weight
LINEAR_TOL = 1e-8            # relative residual accepted from a direct linear solve
FD_STEP = 1e-6

# --- EPSILON PROBLEM ---
ELEMENTS_PER_PERIOD = 16
GROWTH_FACTOR = 1.1

# --- CELL PROBLEMS ---
CACHE_QUANTUM = 1e-3
UNIQUENESS_TOL = 1e-8
ORACLE_POINTS = 2048

# --- MACRO SOLVE ---
RELAXATION = 0.5
MACRO_MAX_ITERATIONS = 200
MACRO_RESIDUAL_TOL = 1e-9      # floor set by the accuracy of the cell solves

# --- STUDIES ---
DECREASE_FACTOR = 0.5        # "decreasing" means last <= alpha * first
QUAD_STABILITY_FRACTION = 0.01
GAP_FLOOR = 1e-12            # gaps below this count as converged
REFERENCE_REFINEMENTS = 2    # reference macro grid is 2**k times finer

# --- OUTPUT ---
CSV_FLOAT_FORMAT = '%.17g'

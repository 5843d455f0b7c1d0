"""Monte Carlo laboratory for Howard's drainage network on Z^2 and its dual."""
import os as _os

# numba reads its pool size once at import; let RIVERWEB_THREADS raise it
if _os.environ.get("RIVERWEB_THREADS", "").isdigit() and "NUMBA_NUM_THREADS" not in _os.environ:
    _os.environ["NUMBA_NUM_THREADS"] = _os.environ["RIVERWEB_THREADS"]
# the bundled TBB is too old for numba and only produces a warning when probed
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapExceeded,
    ConfigError,
    DomainError,
    InsufficientSamples,
    LengthMismatch,
    NotOpen,
    RiverwebError,
    SearchCapExceeded,
    TableMissing,
    WalkTooShort,
)
from .field import ArrayField, Cell, FieldConfig, Site, nearest_open_offset, sample_cell  # noqa: E402
from .forward import Cluster, PathTrace, ancestors, cluster, path, step  # noqa: E402
from .dual import DualSite, KernelQuery, dual_neighbours, dual_path, dual_step, encloses, kernel  # noqa: E402
from .scaling import ScaledProcess, cluster_process, dual_width_process, gamma0, width_process, xi_n  # noqa: E402

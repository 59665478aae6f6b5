"""Hot kernels, compiled when available.

The Cython extension is used if it was built; otherwise the numpy versions
are used. Set ``LINKPATTERN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from linkpattern._kernels import _pykernels as python

compiled = None
if os.environ.get("LINKPATTERN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from linkpattern._kernels import _ckernels as compiled
    except ImportError:
        compiled = None

backend = compiled if compiled is not None else python
BACKEND_NAME = "cython" if compiled is not None else "python"

history_window = backend.history_window
inductive_channels = backend.inductive_channels

__all__ = ["BACKEND_NAME", "compiled", "history_window", "inductive_channels", "python"]

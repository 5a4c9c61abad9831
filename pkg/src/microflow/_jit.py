"""Optional numba acceleration.

The plant integrator runs a few million right-hand-side evaluations per
simulated minute, which is painful in pure Python.  When numba is available
the hot loops are JIT-compiled; without it the same functions run unmodified
(slowly) so the package stays importable everywhere.
"""

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap

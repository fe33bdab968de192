"""Shared gradient-check scaffolding, re-exported from the package self-test.

The construction details (why the redraw scale, the kink margin, and the
frozen seed exist) are documented on patchcast.selfcheck; tests and the
acceptance gate build on the same helpers so there is a single authority for
what a well-conditioned differencing point is.
"""

from patchcast.selfcheck import (  # noqa: F401 - fixture-style re-exports
    CHECK_SEED,
    KINK_MARGIN,
    TINY,
    clear_relu_kinks,
    dual_loss_setup,
)

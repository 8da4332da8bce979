"""EV charging on radial distribution networks.

Thin wrapper over the C++ core: network loading, single allocations,
simulation runs and the observables computed from them.
"""

from ._gridcharge import (
    Network,
    allocate,
    gini,
    order_parameter,
    simulate,
    susceptibility,
)

__all__ = [
    "Network",
    "allocate",
    "gini",
    "order_parameter",
    "simulate",
    "susceptibility",
]

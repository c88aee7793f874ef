"""Cache placement and subsidy settlement in tree-shaped access networks.

Modules:

* :mod:`~cachesub.network`, :mod:`~cachesub.demand`: priced and capacitated topology; Zipf demand
* :mod:`~cachesub.ufl`: per-content placement on a tree at given prices
* :mod:`~cachesub.tradeoff`: optimal tier sizes in a symmetric hierarchy
* :mod:`~cachesub.coalition`: sharing the value of a CO cache among ANOs
* :mod:`~cachesub.lagrangian`: capacity-constrained placement and settlements
* :mod:`~cachesub.protocol`: the same rounds as exchanged messages
* :mod:`~cachesub.scenario`, :mod:`~cachesub.cli`: YAML scenarios and the runner
"""

__version__ = "0.1.0"

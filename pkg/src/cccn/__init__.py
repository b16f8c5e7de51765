"""Network-coded content-centric networking.

Modules:
    gf        GF(2^m) arithmetic and matrices
    netgraph  topologies, max-flow/min-cut, line graphs, role assignment
    coding    transfer matrices, coded symbols, encoding and decoding
    cache     LFRU content store
    protocol  interest/data handling for IP, CCN and CCCN routers
    sim       discrete-event simulator and metrics
    cli       command-line entry point
"""

__version__ = "0.1.0"

"""Rainfall sensing from LTE downlink statistics with a graph neural network.

Modules:

* :mod:`lterain.geodata`     geodesics, station clustering, radar grids, label binning
* :mod:`lterain.ingest`      LTE records, CSV I/O and the synthetic world generator
* :mod:`lterain.features`    histogram node features plus the outdoor share
* :mod:`lterain.graphbuild`  sensing graphs, CV splits, the graph container
* :mod:`lterain.rainnet`     the GCN classifier with hand-written gradients
* :mod:`lterain.evalharness` k-fold baselines and ablations
* :mod:`lterain.energysim`   rain-aware base-station power and water attenuation
* :mod:`lterain.cli`         the ``lterain`` command
"""

__version__ = "0.1.0"

"""Early-stage enterprise infection detection from web proxy or DNS logs.

Rare destinations are profiled day by day, automated (beaconing) channels are
found with interval histograms, candidate C&C domains are scored with a linear
model, and the compromised-host/malicious-domain sets are grown iteratively
from seeds over the host/rare-domain graph.
"""

__version__ = "0.1.0"

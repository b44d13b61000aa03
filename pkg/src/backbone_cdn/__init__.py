"""Federated fetch-through cache network with deterministic replay accounting.

Subpackage map:

- ``core``: domain types, seeded content generation, deployment documents
- ``federation``: data-server/redirector tree and escalating lookup
- ``cache_engine``: block cache with watermark eviction and freshness modes
- ``client``: geo-distance cache ordering and failover reads
- ``simnet``: deterministic simulated transport plus the socket twin
- ``services``: wire-protocol handlers for each node role
- ``accounting``: working set / data read / reuse factor reports
- ``workload``: trace generation and full-stack replay
- ``cli``: the ``backbone-cdn`` command
"""

__version__ = "0.1.0"

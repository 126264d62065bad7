"""Differentially private storage access schemes and their audit harness.

Subpackages and modules:

- ``blockstore``: encrypted cell arrays (memory, file, remote) plus the
  framed wire protocol and its server.
- ``dpir``: stateless private retrieval with a tunable error rate.
- ``dpram``: errorless private RAM with a probabilistic client stash.
- ``mapping``: oblivious two-choice hashing over a forest of shared trees.
- ``dpkvs``: private key-value store composing the mapping with a
  bucket-granular DP-RAM.
- ``audit``: exact and statistical verification of the schemes' transcript
  distributions.
- ``bench``: overhead measurement with storage-layer ground truth counters.
"""

__version__ = "0.1.0"

"""gridops — orchestrates versioned software releases across a fleet of grid sites.

The package covers the full deployment lifecycle: cutting and packaging
releases into content-addressed bundles, publishing them through a primary
repository with cold-store backup and mirrors, driving per-site
installation/validation/publication jobs through a state machine, advertising
results as site tags, monitoring site health, and recording everything in an
append-only bookkeeping ledger with ticket escalation.
"""

__version__ = "0.1.0"

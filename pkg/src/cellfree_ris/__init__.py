"""Multi-RIS cell-free downlink: statistical rate analysis and two-timescale optimization."""

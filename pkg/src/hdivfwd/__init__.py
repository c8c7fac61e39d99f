"""Mixed RT0/P0 finite elements for the EEG forward problem on regular hexahedral meshes."""

__version__ = "0.1.0"

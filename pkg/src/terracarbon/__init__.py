"""Joint above-ground biomass and soil organic carbon estimation from raster predictors."""

__version__ = "0.1.0"

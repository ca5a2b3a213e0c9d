"""Zero-inflated unit-level small area estimation of forest biomass."""
__version__ = "0.1.0"

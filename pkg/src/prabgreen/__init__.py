"""Green's function machinery for the Prabhakar-fractional sub-diffusion problem."""

from .special import SeriesControl, DEFAULT_CTRL, E12Params, rgamma, pochhammer, prabhakar_e, e12, wright_e

__all__ = [
    "SeriesControl", "DEFAULT_CTRL", "E12Params",
    "rgamma", "pochhammer", "prabhakar_e", "e12", "wright_e",
]

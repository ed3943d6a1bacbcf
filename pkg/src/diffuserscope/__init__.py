"""In-silico Fourier DiffuserScope: design, wave-optics PSFs, forward model and reconstruction."""

__version__ = "0.1.0"

"""Magic-echo reversion, pair-phonon decoherence and attenuation-rate analysis
for dipolar-coupled spin-pair crystals."""

__version__ = "0.1.0"

"""solidvoice: desk-scale simulation of solid-channel ultrasonic voice
command injection (dispersion-compensated) and a time/frequency-randomized
universal-perturbation defense, built around a small trainable CTC command
recognizer instead of real hardware and commercial voice assistants."""

__version__ = "0.1.0"

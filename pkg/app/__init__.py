"""3D sound event localization and detection toolkit."""

"""sepkit: unified spectrogram/waveform speech separation toolkit."""

__version__ = "0.1.0"

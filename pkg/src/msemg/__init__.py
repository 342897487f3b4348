"""MSEMG: selective state-space sEMG denoising toolkit.

Subpackages: ssm (selective SSM math), blocks (the denoising network),
training (hand-rolled reverse-mode gradients, Adam, training loop),
dsp (filters, resampling, HP/TS baselines), data (signals, contamination,
synthetic generators), metrics (SNR improvement, RMSE, ARV/MF features),
cli (command-line surface).
"""

__version__ = "0.1.0"

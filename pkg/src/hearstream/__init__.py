"""Frame-online target-speaker enhancement and hearing-aid fitting.

Submodules:
  dsp       streaming STFT analysis/synthesis, causality harness
  kernels   numpy neural-network primitives (conv, LSTM, attention, norms)
  weights   binary tensor container and seeded deterministic initialization
  gridnet   causal speaker-conditioned time-frequency estimator
  embedder  speaker embedding network (enrollment side, non-streaming)
  beamform  frame-online multichannel Wiener filter
  fitting   audiogram prescription (gain FIR) and dynamic range compression
  metrics   scale-invariant SDR and multi-resolution spectral losses
  scenes    deterministic synthetic multichannel scene generator
  pipeline  end-to-end streaming enhancer with the 4 ms latency contract
  wavio     WAV file I/O helpers
  cli       command-line entry points
"""

__version__ = "0.1.0"

"""
melinv
Audio reconstruction from mel-spectrograms by joint estimation of the
full-band magnitude and phase
"""

from .algorithms import (ALGORITHMS, AlgoConfig, JointState, RunTrace, admm_gla, admm_joint,
                         cascade, init_state, ipalm_joint, pg_gla, run_algorithm)
from .errors import AudioIOError, ConfigurationError, InvalidInputError, MelInvError, SolverStateError
from .mel import (MagnitudeGram, MelFilterbank, MelGram, build_mel_filterbank, invert_mel_lsq,
                  mel_compress)
from .metrics import MetricReport, joint_objective, paired_comparison, sc, scm, score_reconstruction
from .prox import prox_magnitude_fit, prox_mel_fit
from .stft import Signal, Spectrogram, StftConfig, istft, project_consistency, stft

__version__ = "0.1.0"

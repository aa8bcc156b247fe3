"""Pupil-function recovery and coded-aperture deconvolution for aberrated
incoherent imaging.

Local PSFs measured through a scanned small aperture are stitched into the
complex pupil by Fourier ptychography; the pupil then drives a joint
deconvolution of captures taken through a full and several coded apertures.
"""

from .aperture import (Coded, FullCircular, ScanSequence, SmallCircular, coded_aperture_search,
                       render_mask, spiral_small_apertures)
from .blur import BlurEstimate, BlurParams, estimate_blur
from .deconvolution import (DeconvParams, build_big_mask_set, combined_otf_coverage, deconvolve,
                            in_band_error)
from .errors import (ConfigError, DataIOError, DimensionError, NonConvergenceError,
                     ParameterError, PupilReconError)
from .pipeline import SimulationRecipe, run_pipeline, simulate_scene
from .simulator import CaptureSet, NoiseModel, PupilFunction, make_pupil, psf_from_masked_pupil
from .synthesis import SynthesisParams, synthesize_pupil

__version__ = "0.1.0"

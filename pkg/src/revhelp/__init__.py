"""Review helpfulness prediction with evolving user expertise and latent item facets."""

from .corpus import CorpusSplit, TokenizedReview, Vocabulary
from .evaluation import EvalReport, evaluate, kl_matrices, salient_words
from .inference import Predictor, TrainResult, fit_regression, train
from .latent_model import Assignments, HyperParams, ModelState, load_snapshot, save_snapshot
from .synthgen import SynthConfig, generate

__version__ = "0.1.0"

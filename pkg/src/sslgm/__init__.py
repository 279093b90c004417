"""Semi-Markov switching linear Gaussian models for early warning of ICU transfer."""
from .changepoint import Segmentation, SegmentationConfig, e_agglo, e_divisive, energy_divergence, segment_series
from .cohort import (CohortSpec, CovariateSampler, GroundTruth, PatientRecord, generate_cohort, read_dataset,
                     read_truth, reference_model, write_dataset, write_truth)
from .errors import ConfigurationError, DataError, LearningError, MetricUndefinedError, SSLGMError
from .evaluation import LogisticBaseline, macro_pr_auc, operating_point, pr_auc, timeliness
from .inference import (ScoringSession, episode_loglik, score_episode, score_session, session_start, session_update,
                        smooth_states)
from .labeling import backward_label, label_episodes
from .learning import EMConfig, FitConfig, backward_labeling_em, em_fit_dynamics, fit_mixture
from .lgm_core import StateDynamics, kalman_filter, rts_smoother, sample_path
from .model import MixtureModel, SslgmParams, load_model, save_model
from .semi_markov import ChainParams, SuperStateSeq, absorption_probs, fit_nb_mle, nb_duration_pmf

__version__ = "0.1.0"

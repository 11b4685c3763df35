"""Dynamic hierarchical Dirichlet process topic model for anomaly detection in streams."""
from .anomaly import DocResult, RocCurve, predictive_loglik, roc_auc, score_corpus
from .corpus import Corpus, Document, HyperParams, Vocabulary, load_corpus, save_corpus
from .crf import CrfState, forward_generate, table_probs, topic_probs_dynamic, topic_probs_hdp, word_loglik
from .inference import GibbsConfig, ModelSnapshot, batch_train, load_snapshot, online_infer, save_snapshot

__version__ = "0.1.0"

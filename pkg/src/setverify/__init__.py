"""setverify: decide whether a set of 2-5 off-line signature images was
written by a single author, with no reference signatures."""

__version__ = "0.1.0"

from .classifier import LssvmModel, grid_search, rbf_kernel, score, train, train_one_class
from .complexity import (ComplexityFeatures, ComplexityModel, assign_complexity,
                         complexity_features, fit_complexity_model, kmeans,
                         pair_class, rank_subsets)
from .datasets import (CorpusIndex, DatasetManifest, TRUTH_MULTI, TRUTH_SINGLE,
                       build_dataset, index_corpus, split, synth_corpus)
from .distances import (FDMatrix, dtw, dtw_normalized, edit_distance,
                        feature_distance_matrix, histogram_distance,
                        hungarian_chi2)
from .duplication import DuplicationParams, duplicate
from .errors import SetVerifyError
from .evaluation import (ExperimentReport, ScoredOutcome, auc, eer, far_frr,
                         likert_metrics, run_experiment)
from .features import FeatureBundle, extract_all
from .imaging import (BinaryImage, GrayImage, SignatureRecord, binarize,
                      connected_components, crop_bbox, load_signature,
                      preprocess, thin)
from .methods import (Eq1Params, MethodBundle, SignatureSet, VerificationResult,
                      eq1_transform, method1_matrix, method1_train,
                      method2_pairs, method2_train, method2_verify,
                      method3_train, method3_verify, verify)
from .pipeline import (SignatureStore, load_method_bundle, save_method_bundle,
                       train_bundle)

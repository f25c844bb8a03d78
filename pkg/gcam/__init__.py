from gcam.activation import (ActivationMap, BoxPrediction, binarize, cam, component_box, gcam,
                             largest_component)
from gcam.localizer import (CENTROID_SOURCES, DEFAULT_THETA, EVAL_SPACES, CorpusFeatures, EvalBank,
                            blank_reference, build_eval_bank, extract_corpus, localize, localize_all, rank_maps)

"""Filtered channel features pedestrian detector.

HOG+LUV channels filtered by exchangeable filter banks, boosted decision
forests trained with hard negative mining, multi-scale sliding-window
detection, and MR/AP evaluation.
"""

from .channels import ChannelOptions, compute_channels, gradient_channels, rgb_to_luv
from .detector import BoundingBox, Detection, PyramidSpec, detect, nms
from .evaluate import (Annotation, EvalCurve, apply_subset, average_precision,
                       log_avg_miss_rate, match)
from .featuremap import (FeatureIndex, ResponseStack, apply_bank, feature_count,
                         feature_indices, read_feature, window_features)
from .filterbank import (Filter, FilterBank, learn_pca, load_bank, make_checkerboards,
                         make_random, make_squares, make_uniform, save_bank)
from .forest import (BoostedForest, Leaf, QuantizedData, SplitNode, Tree, boost,
                     calibrate_cascade, filter_usage, fit_tree, load_model,
                     quantize_matrix, reduce_bank, save_model, score_map,
                     score_window, spatial_influence)
from .training import MiningOptions, train_boosted, train_staged

__version__ = "0.1.0"

"""Context-guided unsupervised re-identification on synthetic scene data."""

from .clustering import DbscanParams, apply_scene_constraint, dbscan, recluster_epoch
from .core import (UNCLUSTERED, BatchSample, ClusterSet, FeatureMemory, Instance, SceneIndex,
                   centroid, normalize)
from .losses import (LossConfig, LossValueWithGrad, combined_loss, contrastive_loss,
                     detection_context_loss, memory_context_loss, select_hard_negative_count,
                     update_memory)
from .metrics import ClusteringScore, RetrievalScore, pairwise_scores, retrieval_scores
from .simulator import (Encoder, TrainSchedule, World, WorldConfig, generate_world,
                        initialize_memory, run_training)

__version__ = "0.1.0"

"""Divide-and-rule learning from ambiguously annotated data.

The package splits a dataset by annotation consistency, trains three sibling
networks with subset-specific objectives, transfers representation ability
back into the prediction network through two parameter-free attention gates,
and fuses three orthographic views.  A synthetic volumetric generator with a
controllable annotator-noise model provides ground truth for end-to-end
verification.
"""

from .errors import (ConfigError, DarError, DataError, ManifestError,
                     ShapeError, VolumeFormatError)
from .labels import (AnnotationRecord, LabelVector, PartitionedDataset,
                     candidate_from_scores, encode_complement, load_manifest,
                     mean_proxy_label, onehot, partition_dataset)
from .losses import (LossConfig, ScheduleConfig, loss_cf, loss_dar, loss_lr,
                     loss_prd, poly_lr, sigmoid, softmax)
from .metrics import MetricsReport, compute_metrics, paired_ttest
from .network import (BackboneSpec, DarModel, MvModel, backbone_forward,
                      ca_module, dar_forward, default_backbone_spec,
                      default_transfer_start, dump_feature_maps,
                      fuse_features, init_backbone_params, load_checkpoint,
                      load_dar_model, load_mv_model, mv_forward, na_module,
                      save_checkpoint, save_dar_model, save_mv_model)
from .synthetic import (AnnotatorModel, SyntheticSpec, default_annotator_model,
                        expected_subset_fractions, gen_dataset, gen_volume,
                        load_truth, simulate_annotators)
from .training import (Adam, TrainConfig, TrainResult, evaluate_mv,
                       finetune_dar, fit_fusion_layer, pretrain, train_fusion)
from .volume import (AugmentParams, PatchTriplet, Volume, apply_augment,
                     augment, crop_cube, extract_triplanar,
                     normalize_intensity, read_volume, resample_isotropic,
                     resize_patch, write_volume)

__version__ = "0.1.0"

from .augment import augment
from .io import (
    load_volume,
    read_label_table,
    read_manifest,
    read_phantom_file,
    write_label_table,
    write_manifest,
    write_phantom_file,
)
from .phantom import PhantomGeometry, generate_cohort, generate_phantom, phantom_geometry, sample_rng
from .preprocess import CropResult, crop_to_content, normalize, preprocess_volume, resample_to_cube
from .split import DEFAULT_AGE_BINS, make_split
from .transformers import VolumePreprocessor, stack_samples
from .types import FEMALE, MALE, AugmentationConfig, DatasetSplit, PhantomConfig, VolumeSample

__all__ = [
    "AugmentationConfig",
    "CropResult",
    "DEFAULT_AGE_BINS",
    "DatasetSplit",
    "FEMALE",
    "MALE",
    "PhantomConfig",
    "PhantomGeometry",
    "VolumePreprocessor",
    "VolumeSample",
    "augment",
    "crop_to_content",
    "generate_cohort",
    "generate_phantom",
    "load_volume",
    "make_split",
    "normalize",
    "phantom_geometry",
    "preprocess_volume",
    "read_label_table",
    "read_manifest",
    "read_phantom_file",
    "resample_to_cube",
    "sample_rng",
    "stack_samples",
    "write_label_table",
    "write_manifest",
    "write_phantom_file",
]

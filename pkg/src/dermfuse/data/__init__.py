from .augment import AugmentPolicy, augment, grayscale
from .dataset import Dataset
from .hair import remove_hair
from .imageio import find_image, read_image, write_image
from .metadata import (FeatureSchema, MetadataRecord, encode_all, encode_features, load_metadata_csv,
                       write_metadata_csv)
from .sampling import Sample, oversample
from .synth import synth_generate

__all__ = [
    "AugmentPolicy", "Dataset", "FeatureSchema", "MetadataRecord", "Sample", "augment", "encode_all",
    "encode_features", "find_image", "grayscale", "load_metadata_csv", "oversample", "read_image",
    "remove_hair", "synth_generate", "write_image", "write_metadata_csv",
]

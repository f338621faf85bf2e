"""Synthetic phantoms, the FDFV volume format, split manifests and augmentation."""
from fdiff.data.augment import augment_flip
from fdiff.data.dataset import gen_dataset, load_split, stack_records
from fdiff.data.manifest import DatasetManifest, make_manifest, split_counts
from fdiff.data.phantom import PhantomConfig, VolumeRecord, ellipsoid_voxel_bounds, gen_phantom
from fdiff.data.volume_io import read_volume, write_volume

__all__ = [
    "PhantomConfig", "VolumeRecord", "gen_phantom", "ellipsoid_voxel_bounds",
    "write_volume", "read_volume", "DatasetManifest", "make_manifest", "split_counts",
    "augment_flip", "gen_dataset", "load_split", "stack_records",
]

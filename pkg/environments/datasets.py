"""On-disk scene datasets: JSON index files plus PNG images.

An index file holds one split of one domain:
    {version, domain, split, image_size, classes,
     entries: [{id, image_path, domain, annotations: [{box: [x0, y0, x1, y1], class_id}]}]}
where image_path is relative to the index file.
"""
import json
import os
import sys

from torch.utils.data import Dataset

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from environments.scenes import CLASS_NAMES, Annotation, Domain, Scene
from utilities.geometry import BoundingBox
from utilities.imaging import read_png

INDEX_VERSION = 1


class DatasetError(IOError):
    """A dataset, index or image file is missing or malformed."""


def scene_entry(scene, image_path):
    return {
        'id': int(scene.id),
        'image_path': image_path,
        'domain': Domain(scene.domain).value,
        'annotations': [{'box': ann.box.to_list(), 'class_id': int(ann.class_id)}
                        for ann in scene.annotations],
    }


def write_index(path, entries, domain, split, image_size):
    index = {
        'version': INDEX_VERSION,
        'domain': Domain(domain).value,
        'split': split,
        'image_size': image_size,
        'classes': list(CLASS_NAMES),
        'entries': entries,
    }
    try:
        with open(path, 'w') as f:
            json.dump(index, f, indent=1, sort_keys=True)
            f.write('\n')
    except OSError as e:
        raise DatasetError(f'Could not write dataset index {path}: {e}') from e


def read_index(path):
    """Load and sanity-check an index file.

    Raises:
        DatasetError: If the file is missing, unparsable or has an unexpected version.
    """
    if not os.path.isfile(path):
        raise DatasetError(f'Dataset index not found: {path}')
    try:
        with open(path, 'r') as f:
            index = json.load(f)
    except (OSError, ValueError) as e:
        raise DatasetError(f'Could not read dataset index {path}: {e}') from e
    if index.get('version') != INDEX_VERSION or 'entries' not in index:
        raise DatasetError(f'{path} is not a version {INDEX_VERSION} dataset index.')
    return index


def annotations_from_entry(entry):
    return [Annotation(BoundingBox.from_list(a['box']), int(a['class_id']))
            for a in entry['annotations']]


class SceneDataset(Dataset):
    """Labeled scenes of an index file (images and annotations)."""

    def __init__(self, index_path):
        self.index_path = index_path
        self.root_dir = os.path.dirname(os.path.abspath(index_path))
        self.index = read_index(index_path)
        self.entries = self.index['entries']

    def __len__(self):
        return len(self.entries)

    def _read_image(self, entry):
        path = os.path.join(self.root_dir, entry['image_path'])
        try:
            return read_png(path)
        except IOError as e:
            raise DatasetError(f'Could not read image {path}') from e

    def __getitem__(self, i):
        entry = self.entries[i]
        return Scene(image=self._read_image(entry),
                     annotations=annotations_from_entry(entry),
                     domain=Domain(entry['domain']),
                     id=entry['id'])


class TargetImageDataset(SceneDataset):
    """Unlabeled view of an index file: returns images only, never annotations."""

    def __getitem__(self, i):
        return self._read_image(self.entries[i])

import os

from tqdm import tqdm

from environments.datasets import DatasetError, scene_entry, write_index
from environments.scenes import IMAGE_SIZE, Domain, generate_scene
from utilities.imaging import write_png

SEED_STRIDE = 1_000_000


def scene_seed(dataset_seed, scene_id):
    return dataset_seed * SEED_STRIDE + scene_id


def generate_and_save(root_path, domain, split, scene_ids, dataset_seed, image_size=IMAGE_SIZE):
    """Render the given scene ids, write their PNGs and the split's index file.

    Returns:
        (str): Path of the written index file.
    """
    domain = Domain(domain)
    image_dir = os.path.join(root_path, domain.value, split)
    try:
        os.makedirs(image_dir, exist_ok=True)
    except OSError as e:
        raise DatasetError(f'Could not create dataset folder {image_dir}: {e}') from e
    entries = []
    for scene_id in tqdm(scene_ids, desc=f'{domain.value}/{split}'):
        scene = generate_scene(scene_seed(dataset_seed, scene_id), domain, image_size)
        scene = scene._replace(id=scene_id)
        filename = '{0:05d}.png'.format(scene_id)
        try:
            write_png(os.path.join(image_dir, filename), scene.image)
        except IOError as e:
            raise DatasetError(f'Could not write {os.path.join(image_dir, filename)}') from e
        entries.append(scene_entry(scene, os.path.join(split, filename)))
    index_path = os.path.join(root_path, domain.value, split + '.json')
    write_index(index_path, entries, domain, split, image_size)
    return index_path


def generate_split(seed, n_train, n_test, domain, root_path, image_size=IMAGE_SIZE):
    """Write the train and test splits of one domain.

    Train scenes get ids 0..n_train-1 and test scenes n_train..n_train+n_test-1, so their seeds
    are disjoint. The same (seed, id) renders the same geometry in both domains.

    Returns:
        (tuple(str, str)): Paths of the train and test index files.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError(f'Split sizes must be positive, got n_train={n_train}, n_test={n_test}.')
    train_path = generate_and_save(root_path, domain, 'train', range(n_train), seed, image_size)
    test_path = generate_and_save(root_path, domain, 'test', range(n_train, n_train + n_test),
                                  seed, image_size)
    return train_path, test_path

//! Native dataset readers, image-grid writer and the checkpoint codec.

mod checkpoint;
mod cifar;
mod dataset;
mod idx;
mod image;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cifar::{parse_cifar10, read_cifar10, CifarBatch, CIFAR_CLASSES, CIFAR_RECORD_BYTES};
pub use dataset::{denormalize, normalize, Dataset, DatasetKind};
pub use idx::{parse_idx, read_idx, read_idx_images, read_idx_labels, IdxData, IdxImages, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use image::{encode_grid, grid_layout, trajectory_grid, write_image_grid, GridLayout, GRID_PAD, PAD_VALUE};

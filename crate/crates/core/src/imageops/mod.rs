//! Training-time augmentation: random resized crop, horizontal flip,
//! AutoAugment sub-policies, channel normalization and CutMix.

mod crop;
mod cutmix;
mod ops;
mod pipeline;
mod policy;

pub use crop::{random_resized_crop, sample_crop_box, CropBox, CROP_ATTEMPTS};
pub use cutmix::{cutmix_pair, paste_patch, sample_patch, MixedTarget, PatchBox};
pub use ops::{apply_op, OpKind, FILL_VALUE};
pub use pipeline::{
    augment_train, augment_traced, denormalize, normalize, AugmentConfig, AugmentTrace, Stage, IMAGENET_MEAN,
    IMAGENET_STD,
};
pub(crate) use pipeline::normalize_values;
pub use policy::{autoaugment, OpSpec, PolicyTable, SubPolicy, POLICY_LEN};

//! Pixel-space types and the mask/pose algebra.

mod image;
pub mod io;
mod mask;
mod posemap;
mod skeleton;

pub use image::{luma, to_grayscale, Image, LUMA, PATCH};
pub use mask::{
    apply_keep, derive_bbox_mask, dilate_editable, downsample_mask, downsample_to_latent,
    silhouette, stitch_pose_into_mask, BinaryMask, Rect, SILHOUETTE_LUMA,
};
pub use posemap::{colorize_pose_map, palette_rgb, BodyPart, PoseMap, PALETTE, PARTS};
pub use skeleton::{
    bresenham, disc, joint_index, rasterize_skeleton, thick_segment, Joint, SkeletonPose, EDGES,
    EDGE_PALETTE, JOINT_NAMES, JOINT_RADIUS, STROKE_WIDTH,
};

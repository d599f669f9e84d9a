//! Contact simulation: analytic shapes pressed into a gel pad.

pub mod cloud;
pub mod field;
pub mod image;
pub mod pose;
pub mod primitive;
pub mod sdf;
pub mod sensor;

pub use cloud::{sample_point_cloud, TactilePointCloud, DEFAULT_POINTS};
pub use field::{compute_displacement_field, raw_penetration, DisplacementField};
pub use image::{render_depth_image, DepthImage, DEFAULT_IMAGE_H, DEFAULT_IMAGE_W};
pub use pose::{
    augment_pose, sample_contact_pose_large, sample_contact_pose_small, seat_pose, ContactPose,
    PoseAugment,
};
pub use primitive::Primitive;
pub use sensor::{SensorSpec, CONTACT_EPS_MM};

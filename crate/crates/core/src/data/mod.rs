//! Synthetic scenes and KITTI-format file I/O.

mod kitti;
mod png_io;
mod scene;

pub use kitti::{load_kitti_sample, load_manifest, read_manifest, KittiRecord};
pub use png_io::{
    is_disparity_file, read_depth_png, read_rgb_png, write_depth_png, write_disparity_png, write_rgb_png,
    write_visualization_png, DepthMap, MAX_ENCODED,
};
pub use scene::{gen_scene, gen_scenes, SceneConfig, Texture};

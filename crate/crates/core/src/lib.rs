pub mod acoustics;
pub mod bvh;
pub mod directivity;
pub mod mesh;
pub mod pointcloud;
pub mod preproc;
pub mod scene;
pub mod server;
pub mod shapes;
pub mod synthesis;
pub mod tracer;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scene-format.md")]
    mod scene_format {}
    #[doc = include_str!("../../../book/src/curvature.md")]
    mod curvature {}
    #[doc = include_str!("../../../book/src/tracing.md")]
    mod tracing {}
    #[doc = include_str!("../../../book/src/magnitudes.md")]
    mod magnitudes {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/point-cloud.md")]
    mod point_cloud {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
}

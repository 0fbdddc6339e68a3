//! Vessel wall segmentation by polar ray casting.
//!
//! The pipeline has two stages:
//!
//! 1. **Centerline localization** ([`centerline`]): a per-voxel proximity
//!    field is built around vessel centerlines and Dijkstra's algorithm traces
//!    a continuous path through the inverted field.
//! 2. **Wall segmentation** ([`polar`], [`segmenter`]): rays are cast in the
//!    axial plane around each centerline point, and a dilated convolutional
//!    network without pooling regresses a lumen radius and a non-negative wall
//!    thickness per angle. Because the outer radius is the lumen radius plus
//!    the thickness, the two contours can never cross.
//!
//! Synthetic phantoms ([`phantom`]) with exact ground truth stand in for
//! annotated MRI, and [`metrics`] scores predictions with Dice and Hausdorff
//! distance.

pub mod centerline;
pub mod contour;
mod error;
pub mod io;
pub mod metrics;
pub mod neuralnet;
pub mod overlay;
pub mod phantom;
pub mod pipeline;
pub mod polar;
pub mod rng;
pub mod segmenter;
pub mod selftest;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Volume, WorldPoint};

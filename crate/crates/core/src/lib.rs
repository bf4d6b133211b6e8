//! Monocular-depth ground navigation with scaled diffusion trajectories.

pub mod diffusion;
pub mod geom;
pub mod guide;
pub mod nn;
pub mod traj;
pub mod percept;
pub mod control;
pub mod scale;
pub mod sim;
pub mod bench;

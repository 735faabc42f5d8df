//! toolgrasp-core: a desk-scale tool-grasping stack.
//!
//! Synthetic depth scenes run through detection, a pixel-wise generative
//! grasp network, a concept-correlation explainability layer, a
//! concept-driven safety filter and a setpoint/trajectory planner, with
//! evaluation harnesses for grasp matching and detection metrics.
//!
//! Modules map onto pipeline stages:
//!
//! - [`geom`] — grasp rectangles, bounding boxes, IoU and matching predicates
//! - [`tensor`] — dense tensors with tape-based reverse-mode gradients
//! - [`ggcnn`] — the generative grasp network (train / forward / decode)
//! - [`concept`] — concept layer on a frozen base model + feature-class correlation
//! - [`safety`] — rule-driven grasp filtering and handover refinement
//! - [`detect`] — baseline detector and the mAP / confusion-matrix harness
//! - [`dataset`] — annotation parsers, depth-map I/O and the synthetic scene generator
//! - [`planner`] — setpoint planning, trapezoidal profiles, joint trajectories
//!
//! The `parallel` feature (on by default) runs the data-parallel inner
//! loops on rayon; without it everything falls back to sequential code.
//! Both paths produce bit-identical results.

pub mod batch;
pub mod concept;
pub mod dataset;
pub mod detect;
pub mod geom;
pub mod ggcnn;
pub mod planner;
pub mod pnm;
pub mod safety;
pub mod tensor;

pub use geom::{BBox, GraspRect, OrientedBox};
pub use ggcnn::{GgcnnConfig, GgcnnModel, GraspMaps};
pub use tensor::{Param, Tensor};

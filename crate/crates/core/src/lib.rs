//! Two-stage gastric ultrasound pipeline.
//!
//! Stage 1 trains an antrum segmentation network with a mean-teacher
//! scheme and bidirectional copy-paste augmentation, then exports per-pixel
//! foreground probability maps. Stage 2 blends each ultrasound view with its
//! probability map and classifies gastric content volume (grades I/II/III)
//! with a dual-branch network, one branch per view (RLD and supine), fused
//! at the probability level.
//!
//! The crate ships a seeded synthetic phantom generator so the whole
//! pipeline trains and evaluates end to end on a desk machine without any
//! clinical data.
//!
//! Module map:
//! - [`data`]: domain types, manifests, patient-level splits.
//! - [`phantom`]: synthetic paired-view phantom generator.
//! - [`nn`]: small differentiable-network substrate (graph engine,
//!   U-Net-style segmentation net, classifier backbone registry, SGD, EMA,
//!   checkpoints).
//! - [`loss`]: Dice, pixel cross-entropy, masked composites, focal loss.
//! - [`metrics`]: DSC, confusion matrices, Acc/Pre/Rec/F1, paired t-test.
//! - [`seg`]: stage-1 training (supervised pretrain, mean-teacher + BCP).
//! - [`cls`]: stage-2 guidance, dual-branch model, fusion registry, training.
//! - [`harness`]: experiment configs, cross-validation, ablations, reports.

pub mod cls;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod seg;

pub use error::{Error, Result};

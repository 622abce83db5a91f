//! Embodiment-aware locomotion policies for robots with arbitrary joint counts.
//!
//! One actor-critic controls every morphology in a roster. Physical
//! parameters are randomized per environment, the randomized values are
//! exposed to the policy through per-joint description vectors, and a single
//! curriculum coefficient scales every difficulty knob of training.

pub mod cli;
pub mod config;
pub mod curriculum;
pub mod env;
pub mod experiments;
pub mod kv;
pub mod morphology;
pub mod network;
pub mod randomization;
pub mod rng;
pub mod templates;
pub mod trainer;

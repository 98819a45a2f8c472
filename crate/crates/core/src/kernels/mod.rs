//! Numerical core shared by the layers.

pub mod nn;
pub mod scan;
pub mod zoh;

pub use nn::{
    layer_norm, layer_norm_backward, layer_norm_into, sigmoid, softmax_cross_entropy, softplus,
    softplus_inverse, LayerNormStats,
};
pub use scan::{
    parallel_scan, parallel_scan_with, sequential_recurrence, ScanConfig, ScanElement, ScanMode,
    ScanValue,
};
pub use zoh::{selective_discretize, zoh_discretize_diagonal, EPS_SWITCH};

//! Mixed-precision quantization of SRU networks driven by a multi-objective
//! genetic search against analytic hardware cost models.
//!
//! The library is organized around one pipeline:
//!
//! 1. [`dataset`] generates a seeded synthetic sequence-classification task.
//! 2. [`trainer`] fits a full-precision SRU baseline and can retrain it with
//!    quantized weights in the loop (binary-connect) to produce beacons.
//! 3. [`quant`] provides the bit-exact numeric primitives: 16-bit fixed point
//!    and integer grids with MMSE-selected clipping thresholds.
//! 4. [`sru`] runs full-precision and quantized inference, including the
//!    activation-range calibration that quantized inference depends on.
//! 5. [`hwcost`] scores a precision assignment on analytic platform models
//!    (memory footprint, speedup, energy).
//! 6. [`search`] binds everything into an NSGA-II problem and runs the
//!    inference-only or beacon-based search.
//! 7. [`config`] and [`cli`] wrap the pipeline for the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod hwcost;
pub mod quant;
pub mod search;
pub mod sru;
pub mod trainer;

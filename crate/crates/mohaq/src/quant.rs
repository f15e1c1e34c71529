//! Numeric primitives: precision codes, 16-bit fixed-point formats, and
//! integer linear quantization with MMSE-selected clipping thresholds.
//!
//! Everything here is a pure function with deterministic, bit-stable output;
//! rounding is round-half-away-from-zero throughout (`f64::round`).

use thiserror::Error;

/// Number of candidate clipping thresholds scanned by the MMSE search.
pub const MMSE_GRID_POINTS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("empty calibration data")]
    EmptyData,
    #[error("precision {0:?} has no integer grid")]
    NotInteger(Precision),
    #[error("range exceeds fixed-point capacity (max |x| = {0})")]
    RangeExceedsCapacity(f64),
    #[error("re-quantization scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("unknown precision code {0}; expected 1..=4")]
    UnknownCode(u8),
}

/// A storage/compute precision. Integer precisions quantize onto a small
/// signed grid; `Fix16` is 16-bit fixed point (sign + integer + fraction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Precision {
    Int2,
    Int4,
    Int8,
    Fix16,
}

impl Precision {
    /// Gene encoding used by the search: 2-bit is 1, 4-bit is 2, 8-bit is 3,
    /// 16-bit fixed point is 4.
    pub fn code(self) -> u8 {
        match self {
            Precision::Int2 => 1,
            Precision::Int4 => 2,
            Precision::Int8 => 3,
            Precision::Fix16 => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, QuantError> {
        match code {
            1 => Ok(Precision::Int2),
            2 => Ok(Precision::Int4),
            3 => Ok(Precision::Int8),
            4 => Ok(Precision::Fix16),
            other => Err(QuantError::UnknownCode(other)),
        }
    }

    pub fn bit_width(self) -> u8 {
        match self {
            Precision::Int2 => 2,
            Precision::Int4 => 4,
            Precision::Int8 => 8,
            Precision::Fix16 => 16,
        }
    }

    pub fn is_integer(self) -> bool {
        self != Precision::Fix16
    }

    /// Signed two's-complement range of the integer grid.
    pub fn int_range(self) -> Option<(i32, i32)> {
        match self {
            Precision::Int2 => Some((-2, 1)),
            Precision::Int4 => Some((-8, 7)),
            Precision::Int8 => Some((-128, 127)),
            Precision::Fix16 => None,
        }
    }

    /// Largest positive level; clipping is symmetric around it.
    pub fn max_level(self) -> Option<i32> {
        self.int_range().map(|(_, hi)| hi)
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::Int2 => "INT2",
            Precision::Int4 => "INT4",
            Precision::Int8 => "INT8",
            Precision::Fix16 => "FIX16",
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// 16-bit fixed-point layout: 1 sign bit, `integer_bits` + `fraction_bits` = 15.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointFormat {
    pub integer_bits: u8,
    pub fraction_bits: u8,
}

impl FixedPointFormat {
    pub fn new(integer_bits: u8) -> Self {
        assert!(integer_bits <= 15);
        FixedPointFormat {
            integer_bits,
            fraction_bits: 15 - integer_bits,
        }
    }

    /// Smallest format whose integer part covers `max_abs`:
    /// integer_bits = least i >= 0 with max_abs <= 2^i.
    pub fn for_range(max_abs: f64) -> Result<Self, QuantError> {
        if !max_abs.is_finite() || max_abs >= 32768.0 {
            return Err(QuantError::RangeExceedsCapacity(max_abs));
        }
        let mut i = 0u8;
        while max_abs > (1u32 << i) as f64 {
            i += 1;
        }
        Ok(FixedPointFormat::new(i))
    }

    pub fn step(self) -> f64 {
        (self.fraction_bits as f64).exp2().recip()
    }

    fn level_scale(self) -> f64 {
        (self.fraction_bits as f64).exp2()
    }

    /// Round `x` onto the grid of multiples of 2^-fraction_bits and saturate.
    /// Levels span [-2^15, 2^15]: the extra top level keeps 2^integer_bits
    /// itself representable, so a vector's own maximum survives the round
    /// trip within half a step.
    pub fn quantize_value(self, x: f64) -> f64 {
        let scale = self.level_scale();
        let level = (x * scale).round().clamp(-32768.0, 32768.0);
        level / scale
    }

    /// Largest representable value (see `quantize_value` on the top level).
    pub fn max_value(self) -> f64 {
        (self.integer_bits as f64).exp2()
    }
}

/// Parameters of an integer linear quantizer with symmetric clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntQuantParams {
    pub clip_threshold: f64,
    pub scale: f64,
    pub precision: Precision,
}

impl IntQuantParams {
    /// Quantizer with a directly chosen clipping threshold.
    pub fn with_clip(clip_threshold: f64, precision: Precision) -> Result<Self, QuantError> {
        let max_level = precision
            .max_level()
            .ok_or(QuantError::NotInteger(precision))?;
        if !(clip_threshold > 0.0) {
            return Err(QuantError::InvalidScale(clip_threshold));
        }
        Ok(IntQuantParams {
            clip_threshold,
            scale: max_level as f64 / clip_threshold,
            precision,
        })
    }

    pub fn quantize_value(&self, x: f64) -> i32 {
        let (lo, hi) = self.precision.int_range().expect("integer precision");
        let clipped = x.clamp(-self.clip_threshold, self.clip_threshold);
        let level = (clipped * self.scale).round();
        (level as i32).clamp(lo, hi)
    }

    pub fn dequantize_level(&self, level: i32) -> f64 {
        level as f64 / self.scale
    }
}

/// Mean squared error of quantizing `data` with clipping threshold `clip`.
fn clip_mse(data: &[f64], clip: f64, precision: Precision) -> f64 {
    let params = IntQuantParams::with_clip(clip, precision).expect("valid clip");
    data.iter()
        .map(|&x| {
            let back = params.dequantize_level(params.quantize_value(x));
            let e = x - back;
            e * e
        })
        .sum()
}

/// Select the clipping threshold minimizing the squared quantization error
/// over a deterministic grid of `MMSE_GRID_POINTS` candidates linearly spaced
/// in (0, max|x|]. Ties keep the first (smallest) candidate. An all-zero
/// vector degenerates to threshold 1.
pub fn mmse_clip_threshold(data: &[f64], precision: Precision) -> Result<IntQuantParams, QuantError> {
    if !precision.is_integer() {
        return Err(QuantError::NotInteger(precision));
    }
    if data.is_empty() {
        return Err(QuantError::EmptyData);
    }
    let max_abs = data.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if max_abs == 0.0 {
        return IntQuantParams::with_clip(1.0, precision);
    }
    let mut best_clip = f64::NAN;
    let mut best_mse = f64::INFINITY;
    for k in 1..=MMSE_GRID_POINTS {
        let clip = max_abs * k as f64 / MMSE_GRID_POINTS as f64;
        let mse = clip_mse(data, clip, precision);
        if mse < best_mse {
            best_mse = mse;
            best_clip = clip;
        }
    }
    IntQuantParams::with_clip(best_clip, precision)
}

/// Clip to the threshold, scale onto the integer grid, round, saturate.
pub fn quantize_int(data: &[f64], params: &IntQuantParams) -> Vec<i32> {
    data.iter().map(|&x| params.quantize_value(x)).collect()
}

pub fn dequantize_int(levels: &[i32], params: &IntQuantParams) -> Vec<f64> {
    levels.iter().map(|&l| params.dequantize_level(l)).collect()
}

/// Format sized for the vector's own range; errors when |x| reaches 2^15.
pub fn fixed16_format_for(data: &[f64]) -> Result<FixedPointFormat, QuantError> {
    if data.is_empty() {
        return Err(QuantError::EmptyData);
    }
    let max_abs = data.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    FixedPointFormat::for_range(max_abs)
}

pub fn quantize_fixed16(data: &[f64], fmt: FixedPointFormat) -> Vec<f64> {
    data.iter().map(|&x| fmt.quantize_value(x)).collect()
}

/// Map an integer-domain vector back to the real domain (divide by `scale`)
/// and round onto the given fixed-point grid.
pub fn requantize_to_fixed16(
    int_output: &[i64],
    scale: f64,
    fmt: FixedPointFormat,
) -> Result<Vec<f64>, QuantError> {
    if !(scale > 0.0) {
        return Err(QuantError::InvalidScale(scale));
    }
    Ok(int_output
        .iter()
        .map(|&v| fmt.quantize_value(v as f64 / scale))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn precision_codes_and_ranges() {
        assert_eq!(Precision::Int2.code(), 1);
        assert_eq!(Precision::Int4.code(), 2);
        assert_eq!(Precision::Int8.code(), 3);
        assert_eq!(Precision::Fix16.code(), 4);
        assert_eq!(Precision::Int8.int_range(), Some((-128, 127)));
        assert_eq!(Precision::Int4.int_range(), Some((-8, 7)));
        assert_eq!(Precision::Int2.int_range(), Some((-2, 1)));
        for p in [Precision::Int2, Precision::Int4, Precision::Int8, Precision::Fix16] {
            assert_eq!(Precision::from_code(p.code()).unwrap(), p);
        }
        assert!(Precision::from_code(0).is_err());
        assert!(Precision::from_code(5).is_err());
    }

    #[test]
    fn mmse_single_value_keeps_full_range() {
        let params = mmse_clip_threshold(&[1.0], Precision::Int8).unwrap();
        assert_eq!(params.clip_threshold, 1.0);
        assert_eq!(params.quantize_value(1.0), 127);
    }

    #[test]
    fn mmse_on_zeros_degenerates_to_unit_clip() {
        let params = mmse_clip_threshold(&[0.0, 0.0, 0.0], Precision::Int4).unwrap();
        assert_eq!(params.clip_threshold, 1.0);
        assert_eq!(params.scale, 7.0);
        assert_eq!(quantize_int(&[0.0, 0.0], &params), vec![0, 0]);
    }

    #[test]
    fn mmse_on_empty_is_an_error() {
        assert_eq!(
            mmse_clip_threshold(&[], Precision::Int8).unwrap_err(),
            QuantError::EmptyData
        );
    }

    #[test]
    fn mmse_matches_exhaustive_scan_and_clips_a_rare_outlier() {
        // 200 unit-magnitude values and a single 10x outlier: on the coarse
        // 2-bit grid, scaling to the outlier would zero out everything else
        let mut data: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        data.push(10.0);
        let params = mmse_clip_threshold(&data, Precision::Int2).unwrap();
        let mut best = (f64::INFINITY, f64::NAN);
        for k in 1..=MMSE_GRID_POINTS {
            let clip = 10.0 * k as f64 / MMSE_GRID_POINTS as f64;
            let mse = clip_mse(&data, clip, Precision::Int2);
            if mse < best.0 {
                best = (mse, clip);
            }
        }
        assert_eq!(params.clip_threshold, best.1);
        assert!(params.clip_threshold < 10.0, "outlier should be clipped");
        assert_eq!(clip_mse(&data, params.clip_threshold, Precision::Int2), best.0);
    }

    #[test]
    fn mmse_optimal_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let data: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for p in [Precision::Int2, Precision::Int4, Precision::Int8] {
                let params = mmse_clip_threshold(&data, p).unwrap();
                let chosen = clip_mse(&data, params.clip_threshold, p);
                let max_abs = data.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                for k in 1..=MMSE_GRID_POINTS {
                    let clip = max_abs * k as f64 / MMSE_GRID_POINTS as f64;
                    assert!(chosen <= clip_mse(&data, clip, p));
                }
            }
        }
    }

    #[test]
    fn quantize_int_clips_rounds_and_saturates() {
        let params = IntQuantParams::with_clip(1.0, Precision::Int8).unwrap();
        assert_eq!(quantize_int(&[0.0, 0.0], &params), vec![0, 0]);
        assert_eq!(quantize_int(&[2.0, -2.0], &params), vec![127, -127]);
        assert_eq!(quantize_int(&[0.26], &params), vec![33]);
    }

    #[test]
    fn quantize_int_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = IntQuantParams::with_clip(1.3, Precision::Int4).unwrap();
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-3.0..3.0);
            assert_eq!(params.quantize_value(-x), -params.quantize_value(x));
        }
    }

    #[test]
    fn int_round_trip_error_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in [Precision::Int2, Precision::Int4, Precision::Int8] {
            let params = IntQuantParams::with_clip(1.5, p).unwrap();
            let bound = params.clip_threshold / p.max_level().unwrap() as f64;
            for _ in 0..500 {
                let x = rng.gen_range(-1.5..1.5);
                let back = params.dequantize_level(params.quantize_value(x));
                assert!((x - back).abs() <= bound);
            }
        }
    }

    #[test]
    fn format_for_picks_smallest_covering_integer_part() {
        assert_eq!(fixed16_format_for(&[0.9]).unwrap(), FixedPointFormat::new(0));
        assert_eq!(fixed16_format_for(&[5.7, -1.0]).unwrap(), FixedPointFormat::new(3));
        assert_eq!(fixed16_format_for(&[0.0, 0.0]).unwrap(), FixedPointFormat::new(0));
        assert!(matches!(
            fixed16_format_for(&[40000.0]),
            Err(QuantError::RangeExceedsCapacity(_))
        ));
        assert!(matches!(
            FixedPointFormat::for_range(32768.0),
            Err(QuantError::RangeExceedsCapacity(_))
        ));
    }

    #[test]
    fn fixed16_rounds_to_grid() {
        let fmt = FixedPointFormat::new(0);
        assert_eq!(fmt.quantize_value(0.0), 0.0);
        assert_eq!(fmt.quantize_value(0.9), 29491.0 / 32768.0);
        assert_eq!(fmt.quantize_value(1.0), 1.0);
        assert_eq!(fmt.quantize_value(7.5), 1.0);
        assert_eq!(fmt.quantize_value(-7.5), -1.0);
    }

    #[test]
    fn fixed16_round_trip_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let data: Vec<f64> = (0..32).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let fmt = fixed16_format_for(&data).unwrap();
            let half_step = fmt.step() / 2.0;
            for (&x, &q) in data.iter().zip(quantize_fixed16(&data, fmt).iter()) {
                assert!((x - q).abs() <= half_step, "{x} -> {q} under {fmt:?}");
            }
        }
    }

    #[test]
    fn requantize_restores_the_real_range() {
        let fmt = FixedPointFormat::new(0);
        assert_eq!(requantize_to_fixed16(&[0, 0], 127.0, fmt).unwrap(), vec![0.0, 0.0]);
        assert_eq!(requantize_to_fixed16(&[127], 127.0, fmt).unwrap(), vec![1.0]);
        assert_eq!(
            requantize_to_fixed16(&[64], 127.0, fmt).unwrap(),
            vec![16513.0 / 32768.0]
        );
        assert!(requantize_to_fixed16(&[1], 0.0, fmt).is_err());
        assert!(requantize_to_fixed16(&[1], -2.0, fmt).is_err());
    }
}

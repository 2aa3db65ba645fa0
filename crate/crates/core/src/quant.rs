//! Fixed-point Q-format arithmetic and word-length analysis.
//!
//! `Qi.f` stores a real on `i + f` bits with `i` integer bits including the
//! sign, so Q6.10 spans [-32, 32 - 2^-10]. Quantization rounds to nearest
//! (ties to even) and saturates at the format bounds; saturation is counted,
//! not an error. The format search tries every integer/fraction split of a
//! word length and keeps the one minimizing mean squared error, breaking
//! ties toward more fractional bits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-point format: `int_bits` integer bits (sign included) and
/// `frac_bits` fractional bits, at most 32 bits total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QFormat {
    pub int_bits: u32,
    pub frac_bits: u32,
}

impl QFormat {
    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self> {
        if int_bits < 1 {
            return Err(Error::Argument("int_bits must be >= 1 (sign included)".into()));
        }
        if int_bits + frac_bits > 32 {
            return Err(Error::Argument(format!(
                "word length {} exceeds 32 bits",
                int_bits + frac_bits
            )));
        }
        Ok(Self { int_bits, frac_bits })
    }

    /// Q6.10: the 16-bit weight format.
    pub fn q6_10() -> Self {
        Self { int_bits: 6, frac_bits: 10 }
    }

    /// Q7.9: the 16-bit feature-map format.
    pub fn q7_9() -> Self {
        Self { int_bits: 7, frac_bits: 9 }
    }

    pub fn word_length(&self) -> u32 {
        self.int_bits + self.frac_bits
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    pub fn raw_min(&self) -> i64 {
        -(1i64 << (self.word_length() - 1))
    }

    pub fn raw_max(&self) -> i64 {
        (1i64 << (self.word_length() - 1)) - 1
    }

    /// Smallest representable value.
    pub fn min_value(&self) -> f64 {
        self.raw_min() as f64 / self.scale()
    }

    /// Largest representable value.
    pub fn max_value(&self) -> f64 {
        self.raw_max() as f64 / self.scale()
    }
}

impl std::fmt::Display for QFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q{}.{}", self.int_bits, self.frac_bits)
    }
}

/// A quantized value: integer raw code plus the reconstructed real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub raw: i64,
    pub value: f64,
    pub saturated: bool,
}

/// Round-to-nearest-even quantization with saturation at the format bounds.
pub fn quantize(x: f64, q: QFormat) -> Quantized {
    let scaled = x * q.scale();
    let rounded = scaled.round_ties_even();
    let (raw, saturated) = if rounded < q.raw_min() as f64 {
        (q.raw_min(), true)
    } else if rounded > q.raw_max() as f64 {
        (q.raw_max(), true)
    } else {
        (rounded as i64, false)
    };
    Quantized { raw, value: raw as f64 / q.scale(), saturated }
}

/// Error statistics of quantizing a tensor with one format.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantStats {
    pub max_abs_err: f64,
    pub mean_sq_err: f64,
    pub saturation_count: u64,
}

/// Quantizes every element and accumulates the error statistics.
pub fn tensor_stats(data: &[f64], q: QFormat) -> QuantStats {
    let mut max_abs = 0.0f64;
    let mut sq = 0.0f64;
    let mut sat = 0u64;
    for &x in data {
        let qv = quantize(x, q);
        let err = (x - qv.value).abs();
        max_abs = max_abs.max(err);
        sq += err * err;
        sat += qv.saturated as u64;
    }
    QuantStats {
        max_abs_err: max_abs,
        mean_sq_err: if data.is_empty() { 0.0 } else { sq / data.len() as f64 },
        saturation_count: sat,
    }
}

/// Tries every integer/fraction split of `word_length` and returns the one
/// minimizing mean squared error; ties resolve toward more fractional bits.
pub fn best_format_search(data: &[f64], word_length: u32) -> Result<(QFormat, QuantStats)> {
    if word_length < 2 || word_length > 32 {
        return Err(Error::Argument("word length must be in [2, 32]".into()));
    }
    if data.is_empty() {
        return Err(Error::Argument("tensor must be non-empty".into()));
    }
    let mut best: Option<(QFormat, QuantStats)> = None;
    for int_bits in 1..=word_length {
        let q = QFormat::new(int_bits, word_length - int_bits)?;
        let stats = tensor_stats(data, q);
        let better = match &best {
            // Ascending int_bits with strict improvement keeps the split
            // with the most fractional bits on ties.
            Some((_, b)) => stats.mean_sq_err < b.mean_sq_err,
            None => true,
        };
        if better {
            best = Some((q, stats));
        }
    }
    Ok(best.expect("at least one split evaluated"))
}

/// Aggregated best-format statistics of a tensor group at one word length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub max_abs_err: f64,
    /// Element-weighted mean of the per-tensor MSEs.
    pub mean_sq_err: f64,
    pub saturation_count: u64,
    /// Chosen format per tensor, `name -> Qi.f`.
    pub formats: Vec<(String, String)>,
}

fn group_stats(tensors: &[(String, Vec<f64>)], wl: u32) -> Result<GroupStats> {
    let mut out = GroupStats::default();
    let mut weighted = 0.0f64;
    let mut elems = 0u64;
    for (name, data) in tensors {
        let (q, stats) = best_format_search(data, wl)?;
        out.max_abs_err = out.max_abs_err.max(stats.max_abs_err);
        out.saturation_count += stats.saturation_count;
        weighted += stats.mean_sq_err * data.len() as f64;
        elems += data.len() as u64;
        out.formats.push((name.clone(), q.to_string()));
    }
    if elems > 0 {
        out.mean_sq_err = weighted / elems as f64;
    }
    Ok(out)
}

/// One cell of the word-length grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub weights_wl: u32,
    pub fm_wl: u32,
    pub weights: Option<GroupStats>,
    pub feature_maps: Option<GroupStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

/// Grid sweep over weight and feature-map word lengths: each cell carries
/// the best-format statistics of both tensor groups. Suitable for plotting
/// error against word length.
pub fn wordlength_sweep(
    weights: &[(String, Vec<f64>)],
    feature_maps: &[(String, Vec<f64>)],
    weight_wls: &[u32],
    fm_wls: &[u32],
) -> Result<SweepReport> {
    // Group statistics are independent of the other group's word length;
    // compute once per (group, wl) and cross-join.
    let mut w_stats = Vec::new();
    for &wl in weight_wls {
        w_stats.push(if weights.is_empty() { None } else { Some(group_stats(weights, wl)?) });
    }
    let mut fm_stats = Vec::new();
    for &wl in fm_wls {
        fm_stats.push(if feature_maps.is_empty() {
            None
        } else {
            Some(group_stats(feature_maps, wl)?)
        });
    }
    let mut cells = Vec::new();
    for (wi, &w_wl) in weight_wls.iter().enumerate() {
        for (fi, &fm_wl) in fm_wls.iter().enumerate() {
            cells.push(SweepCell {
                weights_wl: w_wl,
                fm_wl,
                weights: w_stats[wi].clone(),
                feature_maps: fm_stats[fi].clone(),
            });
        }
    }
    Ok(SweepReport { cells })
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "w_wl,fm_wl,w_max_abs_err,w_mse,w_sat,fm_max_abs_err,fm_mse,fm_sat\n",
        );
        let fmt = |s: &Option<GroupStats>| match s {
            Some(g) => format!("{:e},{:e},{}", g.max_abs_err, g.mean_sq_err, g.saturation_count),
            None => ",,".to_string(),
        };
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c.weights_wl,
                c.fm_wl,
                fmt(&c.weights),
                fmt(&c.feature_maps)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_representable_value() {
        let q = quantize(1.0, QFormat::q6_10());
        assert_eq!(q.raw, 1024);
        assert_eq!(q.value, 1.0);
        assert!(!q.saturated);
    }

    #[test]
    fn rounding_example() {
        // 0.3 * 1024 = 307.2 -> raw 307 -> 0.2998046875.
        let q = quantize(0.3, QFormat::q6_10());
        assert_eq!(q.raw, 307);
        assert_eq!(q.value, 0.2998046875);
    }

    #[test]
    fn saturation_at_range_bounds() {
        let fmt = QFormat::q6_10();
        let hi = quantize(100.0, fmt);
        assert!(hi.saturated);
        assert_eq!(hi.value, 32.0 - (2f64).powi(-10));
        let lo = quantize(-100.0, fmt);
        assert!(lo.saturated);
        assert_eq!(lo.value, -32.0);
    }

    #[test]
    fn best_format_small_magnitudes_pick_one_int_bit() {
        let (q, stats) = best_format_search(&[0.5, -0.25], 16).unwrap();
        assert_eq!(q.int_bits, 1);
        assert_eq!(stats.mean_sq_err, 0.0);
    }

    #[test]
    fn best_format_integer_tensor() {
        // Integers in [-16, 15]: with the sign-inclusive convention the
        // range fits from int_bits = 5 (span [-16, 16)), verified by
        // enumerating every split; the tie-break keeps the earliest
        // zero-error split.
        let data: Vec<f64> = (-16..=15).map(|v| v as f64).collect();
        for int_bits in 1..=16u32 {
            let q = QFormat::new(int_bits, 16 - int_bits).unwrap();
            let stats = tensor_stats(&data, q);
            if int_bits >= 5 {
                assert_eq!(stats.mean_sq_err, 0.0, "int_bits {int_bits}");
            } else {
                assert!(stats.mean_sq_err > 0.0, "int_bits {int_bits}");
            }
        }
        let (q, stats) = best_format_search(&data, 16).unwrap();
        assert_eq!(q.int_bits, 5);
        assert_eq!(stats.mean_sq_err, 0.0);
    }

    #[test]
    fn constant_zero_tensor_maximizes_fraction() {
        let (q, stats) = best_format_search(&[0.0; 16], 16).unwrap();
        assert_eq!(q.int_bits, 1);
        assert_eq!(stats.mean_sq_err, 0.0);
    }

    #[test]
    fn round_trip_error_bound_and_idempotence() {
        let fmt = QFormat::q7_9();
        let bound = (2f64).powi(-(fmt.frac_bits as i32 + 1));
        let mut x = fmt.min_value();
        while x <= fmt.max_value() {
            let q = quantize(x, fmt);
            assert!((x - q.value).abs() <= bound, "x = {x}");
            let q2 = quantize(q.value, fmt);
            assert_eq!(q.raw, q2.raw);
            x += 0.3711;
        }
    }

    #[test]
    fn sweep_single_cell_matches_search() {
        let data = vec![0.1, -0.7, 3.3];
        let report =
            wordlength_sweep(&[("w0".into(), data.clone())], &[], &[16], &[16]).unwrap();
        assert_eq!(report.cells.len(), 1);
        let cell = &report.cells[0];
        let (q, stats) = best_format_search(&data, 16).unwrap();
        let g = cell.weights.as_ref().unwrap();
        assert_eq!(g.mean_sq_err, stats.mean_sq_err);
        assert_eq!(g.formats[0].1, q.to_string());
        assert!(cell.feature_maps.is_none());
    }

    #[test]
    fn error_non_increasing_in_word_length() {
        let data = crate::synth::gaussian_tensor(7, 4096, 2.0);
        let mut prev = f64::INFINITY;
        for wl in [8u32, 10, 12, 14, 16, 18] {
            let (_, stats) = best_format_search(&data, wl).unwrap();
            assert!(stats.mean_sq_err <= prev, "wl {wl}");
            prev = stats.mean_sq_err;
        }
        // 16 bits strictly beat 14 on the max error of this tensor.
        let (_, s14) = best_format_search(&data, 14).unwrap();
        let (_, s16) = best_format_search(&data, 16).unwrap();
        assert!(s16.max_abs_err < s14.max_abs_err);
    }
}

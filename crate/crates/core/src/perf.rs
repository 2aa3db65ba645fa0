//! Latency, throughput and report metrics.
//!
//! A partition's execution time for batch size `B` is
//! `t(B) = (depth_total + ii_max * (B - 1)) / clock`, where `depth_total` is
//! the pipeline-fill depth (node depths plus extra branch buffering) and
//! `ii_max` the largest initiation-interval entry of its SDF matrices. Model
//! latency sums the partition times plus one reconfiguration per partition
//! switch, and throughput divides the MAC-counted workload by it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwblocks::ResourceEstimate;
use crate::Rat;

/// Target device description, loaded from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub dsp: u64,
    pub bram18k: u64,
    pub lut: u64,
    pub ff: u64,
    /// Off-chip memory bandwidth in words per cycle at the design clock.
    /// Split evenly between a partition's input and output streams.
    pub bandwidth: u64,
    /// Design clock in Hz.
    pub clock: f64,
    /// Reconfiguration time in seconds between partitions.
    pub t_reconfig: f64,
}

impl DeviceSpec {
    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: DeviceSpec = serde_json::from_str(&text)?;
        if spec.clock <= 0.0 || spec.bandwidth == 0 {
            return Err(Error::Argument(format!(
                "device `{}` must have positive clock and bandwidth",
                spec.name
            )));
        }
        Ok(spec)
    }

    pub fn fits(&self, rsc: &ResourceEstimate) -> bool {
        rsc.fits(self.dsp, self.bram18k, self.lut, self.ff)
    }

    /// Memory rate available to each of the partition's boundary streams.
    pub fn boundary_rate(&self) -> Rat {
        Rat::new(self.bandwidth as i128, 2)
    }
}

/// Exact cycle count of one partition run: `depth_total + ii_max * (B - 1)`,
/// rounded up once at the end.
pub fn partition_cycles(depth_total: u64, ii_max: Rat, batch: u64) -> Result<u128> {
    if batch == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    if ii_max <= Rat::from_integer(0) {
        return Err(Error::Argument("ii_max must be positive".into()));
    }
    let total = Rat::from_integer(depth_total as i128)
        + ii_max * Rat::from_integer((batch - 1) as i128);
    Ok(total.ceil().to_integer() as u128)
}

/// Partition execution time in seconds. The cycle count is formed exactly
/// and divided by the clock once, so the only rounding is the final one.
pub fn partition_latency(ii_max: Rat, depth_total: u64, batch: u64, clock_hz: f64) -> Result<f64> {
    if clock_hz <= 0.0 {
        return Err(Error::Argument("clock must be positive".into()));
    }
    let cycles = partition_cycles(depth_total, ii_max, batch)?;
    Ok(cycles as f64 / clock_hz)
}

/// Total model latency: partition times plus one reconfiguration per switch.
pub fn total_latency(partition_latencies: &[f64], t_reconfig: f64) -> Result<f64> {
    if partition_latencies.is_empty() {
        return Err(Error::Argument("at least one partition required".into()));
    }
    let sum: f64 = partition_latencies.iter().sum();
    Ok(sum + (partition_latencies.len() as f64 - 1.0) * t_reconfig)
}

/// Model throughput in GOp/s for a batch of `batch` clips.
pub fn throughput_gops(workload_gop: f64, batch: u64, t_total: f64) -> Result<f64> {
    if t_total <= 0.0 {
        return Err(Error::Argument("total latency must be positive".into()));
    }
    Ok(workload_gop * batch as f64 / t_total)
}

/// Per-partition performance entry of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPerf {
    pub id: usize,
    pub kind: String,
    pub layers: usize,
    /// Largest initiation-interval entry, in cycles.
    pub ii_max: f64,
    /// Pipeline-fill depth plus extra branch buffering, in cycles.
    pub depth_total: u64,
    pub cycles: u128,
    pub latency_s: f64,
    pub rsc: ResourceEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub t_total_s: f64,
    pub throughput_gops: f64,
    pub clips_per_s: f64,
    /// Throughput normalized by the mean DSP usage across partitions.
    pub gops_per_dsp: f64,
    pub workload_gop: f64,
    pub dsp_used_mean: f64,
    pub dsp_used_max: u64,
    /// Both aggregations are reported since streaming designs are
    /// reconfigured per partition: `max` is the instantaneous peak,
    /// `mean` the average across partitions.
    pub dsp_pct_max: f64,
    pub dsp_pct_mean: f64,
    pub bram_pct_max: f64,
    pub lut_pct_max: f64,
    pub ff_pct_max: f64,
}

/// Full performance report: per-partition rows plus totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub device: String,
    pub clock_mhz: f64,
    pub batch: u64,
    pub precision: String,
    pub partitions: Vec<PartitionPerf>,
    pub totals: ReportTotals,
}

/// Assembles a report from per-partition entries. Totals are computed from
/// exactly the per-partition values stored in the report, so recomputing
/// them from the rows reproduces the totals bit-for-bit.
pub fn build_report(
    partitions: Vec<PartitionPerf>,
    device: &DeviceSpec,
    batch: u64,
    workload_gop: f64,
) -> Result<PerfReport> {
    let latencies: Vec<f64> = partitions.iter().map(|p| p.latency_s).collect();
    let t_total = total_latency(&latencies, device.t_reconfig)?;
    let throughput = throughput_gops(workload_gop, batch, t_total)?;
    let clips = batch as f64 / t_total;
    let n = partitions.len() as f64;
    let dsp_mean = partitions.iter().map(|p| p.rsc.dsp as f64).sum::<f64>() / n;
    let dsp_max = partitions.iter().map(|p| p.rsc.dsp).max().unwrap_or(0);
    let gops_per_dsp = if dsp_mean > 0.0 { throughput / dsp_mean } else { 0.0 };
    let pct = |used: f64, cap: u64| if cap > 0 { used / cap as f64 * 100.0 } else { 0.0 };
    let max_of = |f: fn(&ResourceEstimate) -> u64| {
        partitions.iter().map(|p| f(&p.rsc)).max().unwrap_or(0)
    };
    let totals = ReportTotals {
        t_total_s: t_total,
        throughput_gops: throughput,
        clips_per_s: clips,
        gops_per_dsp,
        workload_gop,
        dsp_used_mean: dsp_mean,
        dsp_used_max: dsp_max,
        dsp_pct_max: pct(dsp_max as f64, device.dsp),
        dsp_pct_mean: pct(dsp_mean, device.dsp),
        bram_pct_max: pct(max_of(|r| r.bram18k) as f64, device.bram18k),
        lut_pct_max: pct(max_of(|r| r.lut) as f64, device.lut),
        ff_pct_max: pct(max_of(|r| r.ff) as f64, device.ff),
    };
    Ok(PerfReport {
        device: device.name.clone(),
        clock_mhz: device.clock / 1e6,
        batch,
        precision: "16-bit fixed".to_string(),
        partitions,
        totals,
    })
}

impl PerfReport {
    pub fn csv_header() -> &'static str {
        "design,batch,clips_per_s,gops,gops_per_dsp,clock_mhz,precision,dsp_pct_max,dsp_pct_mean"
    }

    /// One summary row with the headline comparison metrics.
    pub fn csv_row(&self, design: &str) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.6},{:.2},{},{:.2},{:.2}",
            design,
            self.batch,
            self.totals.clips_per_s,
            self.totals.throughput_gops,
            self.totals.gops_per_dsp,
            self.clock_mhz,
            self.precision,
            self.totals.dsp_pct_max,
            self.totals.dsp_pct_mean,
        )
    }

    /// Per-partition detail rows.
    pub fn partition_csv(&self) -> String {
        let mut out = String::from(
            "partition,kind,layers,ii_max,depth_total,cycles,latency_s,dsp,bram18k,lut,ff\n",
        );
        for p in &self.partitions {
            out.push_str(&format!(
                "{},{},{},{:.4},{},{},{:.9},{},{},{},{}\n",
                p.id,
                p.kind,
                p.layers,
                p.ii_max,
                p.depth_total,
                p.cycles,
                p.latency_s,
                p.rsc.dsp,
                p.rsc.bram18k,
                p.rsc.lut,
                p.rsc.ff
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev() -> DeviceSpec {
        DeviceSpec {
            name: "test".into(),
            dsp: 2520,
            bram18k: 1824,
            lut: 274080,
            ff: 548160,
            bandwidth: 64,
            clock: 142e6,
            t_reconfig: 0.05,
        }
    }

    #[test]
    fn batch_one_latency_is_depth_over_clock() {
        let t = partition_latency(Rat::from_integer(12345), 1000, 1, 142e6).unwrap();
        assert_eq!(t, 1000.0 / 142e6);
    }

    #[test]
    fn latency_example() {
        // depth 1000, ii 10000, B 100 at 142 MHz -> 991000 cycles ~ 6.979 ms.
        let cycles = partition_cycles(1000, Rat::from_integer(10_000), 100).unwrap();
        assert_eq!(cycles, 991_000);
        let t = partition_latency(Rat::from_integer(10_000), 1000, 100, 142e6).unwrap();
        assert!((t - 991_000.0 / 142e6).abs() < 1e-15);
        assert!((t - 6.979e-3).abs() < 1e-5);
    }

    #[test]
    fn zero_batch_and_zero_ii_are_rejected() {
        assert!(partition_cycles(10, Rat::from_integer(5), 0).is_err());
        assert!(partition_cycles(10, Rat::from_integer(0), 4).is_err());
    }

    #[test]
    fn reconfiguration_counts_switches() {
        let t1 = total_latency(&[0.25], 0.05).unwrap();
        assert_eq!(t1, 0.25);
        let parts = vec![0.01; 26];
        let t26 = total_latency(&parts, 0.05).unwrap();
        assert!((t26 - (0.26 + 25.0 * 0.05)).abs() < 1e-12);
    }

    #[test]
    fn per_clip_latency_decreases_with_batch() {
        // Reconfiguration amortization: t_total(B)/B is decreasing in B.
        let ii = Rat::from_integer(5000);
        let mut prev = f64::INFINITY;
        for b in [1u64, 2, 5, 10, 50, 100, 1000] {
            let t = partition_latency(ii, 800, b, 142e6).unwrap();
            let t_total = total_latency(&vec![t; 4], 0.05).unwrap();
            let per_clip = t_total / b as f64;
            assert!(per_clip < prev);
            prev = per_clip;
        }
    }

    #[test]
    fn throughput_identities() {
        let thr = throughput_gops(6.4, 100, 5.0).unwrap();
        let clips = 100.0 / 5.0;
        assert!((clips * 6.4 - thr).abs() < 1e-12);
        // Doubling B and t_total leaves throughput unchanged.
        let thr2 = throughput_gops(6.4, 200, 10.0).unwrap();
        assert_eq!(thr, thr2);
    }

    #[test]
    fn report_totals_recompute_from_rows() {
        let device = dev();
        let mk = |id: usize, ii: f64, depth: u64, lat: f64, dsp: u64| PartitionPerf {
            id,
            kind: "Residual".into(),
            layers: 3,
            ii_max: ii,
            depth_total: depth,
            cycles: 0,
            latency_s: lat,
            rsc: ResourceEstimate { dsp, bram18k: 4, lut: 900, ff: 1200 },
        };
        let parts = vec![mk(0, 100.0, 10, 0.002, 128), mk(1, 250.0, 20, 0.004, 64)];
        let report = build_report(parts, &device, 100, 6.4).unwrap();

        // Hand-computed Eq. 3 / Eq. 4 values.
        let t_total = 0.002 + 0.004 + 0.05;
        assert_eq!(report.totals.t_total_s, t_total);
        assert_eq!(report.totals.throughput_gops, 6.4 * 100.0 / t_total);
        assert_eq!(report.totals.clips_per_s, 100.0 / t_total);
        assert_eq!(report.totals.dsp_used_mean, 96.0);
        assert_eq!(report.totals.gops_per_dsp, report.totals.throughput_gops / 96.0);

        // Recomputing the totals from the stored rows reproduces them exactly.
        let lat: Vec<f64> = report.partitions.iter().map(|p| p.latency_s).collect();
        let re_total = total_latency(&lat, device.t_reconfig).unwrap();
        assert_eq!(re_total, report.totals.t_total_s);
    }

    #[test]
    fn single_partition_report_equals_partition_metrics() {
        let device = dev();
        let p = PartitionPerf {
            id: 0,
            kind: "Type3".into(),
            layers: 6,
            ii_max: 4096.0,
            depth_total: 77,
            cycles: 409_677,
            latency_s: 409_677.0 / 142e6,
            rsc: ResourceEstimate { dsp: 32, bram18k: 8, lut: 5000, ff: 7000 },
        };
        let report = build_report(vec![p.clone()], &device, 100, 1.0).unwrap();
        assert_eq!(report.totals.t_total_s, p.latency_s);
        assert_eq!(report.totals.clips_per_s, 100.0 / p.latency_s);
    }
}

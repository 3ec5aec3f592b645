//! Raw detector traces to calibrated quadrature datasets.
//!
//! Every `spacing` samples, `group` adjacent samples are averaged into one
//! quadrature point. Channel 2 is read `delay_mismatch` samples later than
//! channel 1. Blocks are aligned to the first sync edge (modulo the spacing);
//! the first and the last whole block of the record are dropped so that
//! both channels stay inside the record for any delay below half a spacing.
//! A two-million-sample record with the default geometry gives 7998 points.
//!
//! Voltages are normalized with the vacuum calibration so that shot noise
//! has mean 0 and variance 1/2, and phases are assigned by linear
//! interpolation between ramp markers.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{DatasetMetadata, QuadratureDataset, QuadratureRecord, Scheme};

/// Averaging block layout in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGeometry {
    pub spacing: usize,
    pub group: usize,
}

impl Default for BlockGeometry {
    fn default() -> Self {
        Self { spacing: 250, group: 4 }
    }
}

impl BlockGeometry {
    fn check(&self) -> Result<()> {
        if self.group == 0 || self.spacing < self.group {
            return Err(Error::Calibration(format!(
                "block group {} must be in 1..={}",
                self.group, self.spacing
            )));
        }
        Ok(())
    }
}

/// Voltage record from the oscilloscope.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    /// Samples per second.
    pub sample_rate: f64,
    /// One (homodyne) or two (heterodyne) voltage channels.
    pub channels: Vec<Vec<f64>>,
    /// Sample indices of ramp-start sync edges.
    pub sync_edges: Vec<usize>,
    /// Channel 2 lag relative to channel 1, in samples.
    pub delay_mismatch: i64,
}

impl RawTrace {
    pub fn new(sample_rate: f64, channels: Vec<Vec<f64>>, sync_edges: Vec<usize>, delay_mismatch: i64) -> Result<Self> {
        let t = Self { sample_rate, channels, sync_edges, delay_mismatch };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::Calibration(format!("sample rate {} must be > 0", self.sample_rate)));
        }
        if self.channels.is_empty() || self.channels.len() > 2 {
            return Err(Error::Calibration(format!("expected 1 or 2 channels, got {}", self.channels.len())));
        }
        let n = self.channels[0].len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::Calibration("channel lengths differ".into()));
        }
        if self.sync_edges.windows(2).any(|w| w[1] <= w[0]) || self.sync_edges.iter().any(|&e| e > n) {
            return Err(Error::Calibration("sync edges must be increasing and inside the record".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds a trace whose block averages are exactly the given voltages:
    /// each group is filled with its block value, every other sample with
    /// `fill`.
    pub fn synthesize(
        block_voltages: &[Vec<f64>],
        geometry: BlockGeometry,
        n_samples: usize,
        sample_rate: f64,
        sync_edges: Vec<usize>,
        delay_mismatch: i64,
        fill: &[f64],
    ) -> Result<Self> {
        geometry.check()?;
        let anchor = sync_edges.first().map_or(0, |e| e % geometry.spacing);
        let positions = block_positions(n_samples, anchor, geometry)?;
        let mut channels = Vec::with_capacity(block_voltages.len());
        for (c, volts) in block_voltages.iter().enumerate() {
            if volts.len() != positions.len() {
                return Err(Error::DimensionMismatch { expected: positions.len(), found: volts.len() });
            }
            let offset = if c == 1 { delay_mismatch } else { 0 };
            let mut ch = vec![fill.get(c).copied().unwrap_or(0.0); n_samples];
            for (&pos, &v) in positions.iter().zip(volts) {
                let start = (pos as i64 + offset) as usize;
                ch[start..start + geometry.group].fill(v);
            }
            channels.push(ch);
        }
        Self::new(sample_rate, channels, sync_edges, delay_mismatch)
    }
}

/// Channel-1 start samples of every retained block.
fn block_positions(n: usize, anchor: usize, g: BlockGeometry) -> Result<Vec<usize>> {
    let blocks = n / g.spacing;
    if blocks < 3 {
        return Err(Error::TraceTooShort(format!(
            "{n} samples hold {blocks} blocks of {}; need at least 3",
            g.spacing
        )));
    }
    Ok((1..=blocks - 2).map(|k| anchor + k * g.spacing).collect())
}

/// Block-averaged voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAverages {
    pub channels: Vec<Vec<f64>>,
    /// Channel-1 start sample of each point.
    pub positions: Vec<usize>,
    pub geometry: BlockGeometry,
}

impl BlockAverages {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Averages `group` samples every `spacing` samples on each channel.
pub fn block_average(trace: &RawTrace, geometry: BlockGeometry) -> Result<BlockAverages> {
    trace.validate()?;
    geometry.check()?;
    let d = trace.delay_mismatch;
    if d.unsigned_abs() as usize * 2 >= geometry.spacing {
        return Err(Error::Calibration(format!(
            "delay mismatch {d} must be below half the block spacing {}",
            geometry.spacing
        )));
    }
    let anchor = trace.sync_edges.first().map_or(0, |e| e % geometry.spacing);
    let positions = block_positions(trace.len(), anchor, geometry)?;
    let channels = trace
        .channels
        .iter()
        .enumerate()
        .map(|(c, samples)| {
            let offset = if c == 1 { d } else { 0 };
            positions
                .iter()
                .map(|&p| {
                    let start = (p as i64 + offset) as usize;
                    samples[start..start + geometry.group].iter().sum::<f64>() / geometry.group as f64
                })
                .collect()
        })
        .collect();
    Ok(BlockAverages { channels, positions, geometry })
}

/// Mean and unbiased variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub var: f64,
}

fn channel_stats(v: &[f64]) -> ChannelStats {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() < 2 { 0.0 } else { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) };
    ChannelStats { mean, var }
}

/// Per-channel statistics of the block-averaged vacuum trace.
pub fn shot_noise_stats(vacuum: &RawTrace, geometry: BlockGeometry) -> Result<Vec<ChannelStats>> {
    let avg = block_average(vacuum, geometry)?;
    Ok(avg.channels.iter().map(|c| channel_stats(c)).collect())
}

/// Calibration of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCalibration {
    /// Shot-noise mean `SN_m` (V).
    pub sn_mean: f64,
    /// Shot-noise variance `SN_var` (V^2).
    pub sn_var: f64,
    /// Electronics-noise variance with the LO blocked (V^2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electronics_var: Option<f64>,
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `r_squared` below [`LINEARITY_R2`].
    pub nonlinear: bool,
}

/// Smallest R^2 accepted as a linear shot-noise response.
pub const LINEARITY_R2: f64 = 0.995;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub lo_power_mw: f64,
    pub channels: Vec<ChannelCalibration>,
    /// Shot-noise variance versus LO power, per channel, when several powers were measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<Vec<LinearFit>>,
}

impl CalibrationRecord {
    /// Calibration from a vacuum trace and, optionally, an electronics-noise trace.
    pub fn from_traces(
        vacuum: &RawTrace,
        electronics: Option<&RawTrace>,
        lo_power_mw: f64,
        geometry: BlockGeometry,
    ) -> Result<Self> {
        let sn = shot_noise_stats(vacuum, geometry)?;
        let el = electronics.map(|t| shot_noise_stats(t, geometry)).transpose()?;
        if let Some(el) = &el {
            if el.len() != sn.len() {
                return Err(Error::Calibration("electronics trace has a different channel count".into()));
            }
        }
        let channels = sn
            .iter()
            .enumerate()
            .map(|(c, s)| ChannelCalibration {
                sn_mean: s.mean,
                sn_var: s.var,
                electronics_var: el.as_ref().map(|e| e[c].var),
            })
            .collect();
        Ok(Self { lo_power_mw, channels, fit: None })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// Least-squares fit of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Calibration("need at least two (power, variance) points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Calibration("all LO powers are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (slope * a + intercept)).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok(LinearFit { slope, intercept, r_squared, nonlinear: r_squared < LINEARITY_R2 })
}

/// Per-channel fit of shot-noise variance against LO power.
pub fn fit_shot_noise(records: &[CalibrationRecord]) -> Result<Vec<LinearFit>> {
    let Some(first) = records.first() else {
        return Err(Error::Calibration("no calibration records".into()));
    };
    let n_ch = first.channels.len();
    if records.iter().any(|r| r.channels.len() != n_ch) {
        return Err(Error::Calibration("records differ in channel count".into()));
    }
    let powers: Vec<f64> = records.iter().map(|r| r.lo_power_mw).collect();
    (0..n_ch)
        .map(|c| {
            let vars: Vec<f64> = records.iter().map(|r| r.channels[c].sn_var).collect();
            linear_fit(&powers, &vars)
        })
        .collect()
}

/// `SN_var / electronics_var` per channel.
pub fn noise_ratio(cal: &CalibrationRecord) -> Result<Vec<f64>> {
    cal.channels
        .iter()
        .map(|c| match c.electronics_var {
            Some(e) if e > 0.0 => Ok(c.sn_var / e),
            _ => Err(Error::Calibration("electronics-noise variance missing or zero".into())),
        })
        .collect()
}

fn channel_scale(c: &ChannelCalibration) -> Result<f64> {
    if !(c.sn_var > 0.0) {
        return Err(Error::Calibration(format!("shot-noise variance {} must be > 0", c.sn_var)));
    }
    Ok((0.5 / c.sn_var).sqrt())
}

/// `q = (V - SN_m) sqrt((1/2) / SN_var)` per channel.
pub fn normalize_quadratures(avg: &BlockAverages, cal: &CalibrationRecord) -> Result<Vec<Vec<f64>>> {
    if avg.channels.len() != cal.channels.len() {
        return Err(Error::DimensionMismatch { expected: cal.channels.len(), found: avg.channels.len() });
    }
    avg.channels
        .iter()
        .zip(&cal.channels)
        .map(|(v, c)| {
            let s = channel_scale(c)?;
            Ok(v.iter().map(|x| (x - c.sn_mean) * s).collect())
        })
        .collect()
}

/// Inverse of [`normalize_quadratures`]: `V = q sqrt(SN_var / (1/2)) + SN_m`.
pub fn denormalize_quadratures(q: &[Vec<f64>], cal: &CalibrationRecord) -> Result<Vec<Vec<f64>>> {
    if q.len() != cal.channels.len() {
        return Err(Error::DimensionMismatch { expected: cal.channels.len(), found: q.len() });
    }
    q.iter()
        .zip(&cal.channels)
        .map(|(v, c)| {
            let s = channel_scale(c)?;
            Ok(v.iter().map(|x| x / s + c.sn_mean).collect())
        })
        .collect()
}

/// Phases of points on linear `2 pi` ramps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAssignment {
    /// Indices of the points inside complete ramps.
    pub kept: Vec<usize>,
    /// Phase of each kept point.
    pub theta: Vec<f64>,
    pub dropped_before: usize,
    pub dropped_after: usize,
    /// Complete ramps.
    pub sweeps: usize,
}

/// Assigns `theta = 2 pi (k - m_j) / (m_{j+1} - m_j)` to each point `k` in
/// `[m_j, m_{j+1})`. `markers` are ramp boundaries in point units; points
/// outside `[m_0, m_last)` are dropped.
pub fn assign_phases(k: usize, markers: &[f64]) -> Result<PhaseAssignment> {
    if markers.is_empty() {
        return Err(Error::NoMarkers);
    }
    if markers.len() < 2 {
        return Err(Error::Calibration("a complete ramp needs two markers".into()));
    }
    if markers.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Calibration("ramp markers must be increasing".into()));
    }
    let first = markers[0];
    let last = markers[markers.len() - 1];
    let mut out = PhaseAssignment {
        kept: Vec::new(),
        theta: Vec::new(),
        dropped_before: 0,
        dropped_after: 0,
        sweeps: markers.len() - 1,
    };
    let mut j = 0;
    for i in 0..k {
        let pos = i as f64;
        if pos < first {
            out.dropped_before += 1;
            continue;
        }
        if pos >= last {
            out.dropped_after += 1;
            continue;
        }
        while pos >= markers[j + 1] {
            j += 1;
        }
        let (a, b) = (markers[j], markers[j + 1]);
        out.kept.push(i);
        out.theta.push(TAU * (pos - a) / (b - a));
    }
    Ok(out)
}

/// Sample indices where `sync` rises through `threshold`.
pub fn detect_edges(sync: &[f64], threshold: f64) -> Vec<usize> {
    (1..sync.len()).filter(|&i| sync[i - 1] < threshold && sync[i] >= threshold).collect()
}

/// Ramp boundaries in sample units: the sync edges, plus the end of the last
/// ramp when it finishes inside the record.
pub fn ramp_markers(trace: &RawTrace, ramp_frequency_hz: Option<f64>) -> Vec<f64> {
    let mut m: Vec<f64> = trace.sync_edges.iter().map(|&e| e as f64).collect();
    if let (Some(f), Some(&last)) = (ramp_frequency_hz, m.last()) {
        let end = last + trace.sample_rate / f;
        if end <= trace.len() as f64 + 1e-9 {
            m.push(end);
        }
    }
    m
}

/// Output of [`ingest`].
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub dataset: QuadratureDataset,
    pub points: usize,
    pub dropped_before: usize,
    pub dropped_after: usize,
    pub sweeps: usize,
}

/// Trace to dataset: block averaging, normalization and phase assignment.
/// Two channels give heterodyne `(x, p)` records, one channel homodyne `x`.
pub fn ingest(
    trace: &RawTrace,
    cal: &CalibrationRecord,
    geometry: BlockGeometry,
    ramp_frequency_hz: Option<f64>,
) -> Result<IngestReport> {
    let avg = block_average(trace, geometry)?;
    let q = normalize_quadratures(&avg, cal)?;
    // Point i sits at sample positions[i] = positions[0] + i * spacing.
    let p0 = avg.positions[0] as f64;
    let sp = geometry.spacing as f64;
    let markers: Vec<f64> = ramp_markers(trace, ramp_frequency_hz).iter().map(|m| (m - p0) / sp).collect();
    let phases = assign_phases(avg.len(), &markers)?;
    let records = phases
        .kept
        .iter()
        .zip(&phases.theta)
        .map(|(&i, &t)| match q.len() {
            1 => QuadratureRecord::homodyne(t, q[0][i]),
            _ => QuadratureRecord::heterodyne(t, q[0][i], q[1][i]),
        })
        .collect();
    let scheme = if q.len() == 1 { Scheme::Homodyne } else { Scheme::Heterodyne };
    let dataset = QuadratureDataset::new(scheme, records)?.with_metadata(DatasetMetadata {
        source_id: "trace".into(),
        lo_power_mw: Some(cal.lo_power_mw),
        notes: format!(
            "{} points, {} dropped before the first ramp, {} after the last",
            avg.len(),
            phases.dropped_before,
            phases.dropped_after
        ),
        provenance: serde_json::json!({ "geometry": geometry, "calibration": cal }),
    });
    Ok(IngestReport {
        dataset,
        points: avg.len(),
        dropped_before: phases.dropped_before,
        dropped_after: phases.dropped_after,
        sweeps: phases.sweeps,
    })
}

/// JSON header of a trace file; samples live in a little-endian `f32`
/// binary file, channel after channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub sample_rate: f64,
    pub delay_mismatch: i64,
    pub sync_edges: Vec<usize>,
    /// Samples per channel.
    pub samples: usize,
    pub channels: usize,
    /// Binary file name, relative to the header.
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_frequency_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo_power_mw: Option<f64>,
}

/// Writes `<stem>.json` and `<stem>.bin`; voltages are stored as `f32`.
pub fn write_trace(
    trace: &RawTrace,
    header_path: &Path,
    ramp_frequency_hz: Option<f64>,
    lo_power_mw: Option<f64>,
) -> Result<()> {
    trace.validate()?;
    let bin_path = header_path.with_extension("bin");
    let data_file = bin_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Calibration("bad trace path".into()))?
        .to_string();
    let header = TraceHeader {
        sample_rate: trace.sample_rate,
        delay_mismatch: trace.delay_mismatch,
        sync_edges: trace.sync_edges.clone(),
        samples: trace.len(),
        channels: trace.channels.len(),
        data_file,
        ramp_frequency_hz,
        lo_power_mw,
    };
    let mut w = BufWriter::new(File::create(&bin_path)?);
    for ch in &trace.channels {
        for &v in ch {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut h = BufWriter::new(File::create(header_path)?);
    serde_json::to_writer_pretty(&mut h, &header)?;
    h.write_all(b"\n")?;
    h.flush()?;
    Ok(())
}

/// Reads a header and its binary samples.
pub fn read_trace(header_path: &Path) -> Result<(RawTrace, TraceHeader)> {
    let header: TraceHeader = serde_json::from_reader(BufReader::new(File::open(header_path)?))?;
    let bin: PathBuf = header_path.parent().unwrap_or(Path::new(".")).join(&header.data_file);
    let mut bytes = Vec::new();
    BufReader::new(File::open(&bin)?).read_to_end(&mut bytes)?;
    let expected = header.samples * header.channels * 4;
    if bytes.len() != expected {
        return Err(Error::Calibration(format!(
            "{} holds {} bytes, header implies {expected}",
            bin.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> =
        bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    let channels = values.chunks(header.samples.max(1)).take(header.channels).map(<[f64]>::to_vec).collect();
    let trace = RawTrace::new(header.sample_rate, channels, header.sync_edges.clone(), header.delay_mismatch)?;
    Ok((trace, header))
}

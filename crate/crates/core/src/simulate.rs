//! Synthetic quadrature data from a known state.
//!
//! Each record picks an LO phase uniformly in `[0, 2 pi)` and draws one
//! outcome from the outcome density discretized on a grid of cell centers,
//! i.e. a single multinomial draw per record.
//!
//! Homodyne draws evaluate the whole 1D grid. Heterodyne grids have
//! hundreds of thousands of cells, so heterodyne draws use rejection
//! sampling with uniform cell proposals: the Husimi function is bounded by
//! `1/pi`, so accepting a cell with probability `pi f(cell)` yields exactly
//! the same discrete distribution without touching every cell.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{apply_loss, make_state, mean_photon, DensityMatrix, FidelityReference, LossyDensityMatrix, StateSpec, C64};
use crate::measurement::{MeasurementConfig, QuadratureDataset, QuadratureRecord, Scheme};
use crate::par::{self, Execution};
use crate::sampler::{estimate_functional, run_chain, SamplerConfig};
use crate::special::hermite_functions_into;

/// Default grid spacing in quadrature units.
pub const DEFAULT_RESOLUTION: f64 = 0.07;
/// Largest tolerated probability mass outside the grid.
pub const MASS_TOL: f64 = 1e-6;

/// Default grid halfwidth `6 + 3 sqrt(2 <n>)`.
pub fn default_halfwidth(mean_photon: f64) -> f64 {
    6.0 + 3.0 * (2.0 * mean_photon.max(0.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub spec: StateSpec,
    pub scheme: Scheme,
    /// Number of records `K`.
    pub records: usize,
    pub eta: f64,
    /// Photon-number cutoff used to represent the state.
    pub cutoff: usize,
    #[serde(default = "default_resolution")]
    pub grid_resolution: f64,
    /// `None` selects [`default_halfwidth`] of the state's mean photon number.
    #[serde(default)]
    pub grid_halfwidth: Option<f64>,
    pub seed: u64,
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

impl SimConfig {
    pub fn new(spec: StateSpec, scheme: Scheme, records: usize, eta: f64, cutoff: usize, seed: u64) -> Self {
        Self { spec, scheme, records, eta, cutoff, grid_resolution: DEFAULT_RESOLUTION, grid_halfwidth: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.records == 0 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        if !(self.grid_resolution > 0.0) {
            return Err(Error::InvalidParameter(format!("grid resolution {} must be > 0", self.grid_resolution)));
        }
        if let Some(h) = self.grid_halfwidth {
            if !(h > 0.0) {
                return Err(Error::InvalidParameter(format!("grid halfwidth {h} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!("eta={} outside [0, 1]", self.eta)));
        }
        Ok(())
    }

    /// The ground-truth state before loss.
    pub fn truth(&self) -> Result<DensityMatrix> {
        make_state(&self.spec, self.cutoff)
    }
}

/// Cell centers `-H + (i + 1/2) dx` covering `[-H, H]` with `ceil(2H/dx)` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1 {
    pub centers: Vec<f64>,
    pub spacing: f64,
}

impl Grid1 {
    pub fn new(halfwidth: f64, spacing: f64) -> Self {
        let n = (2.0 * halfwidth / spacing).ceil().max(1.0) as usize;
        let h = n as f64 * spacing / 2.0;
        let centers = (0..n).map(|i| -h + (i as f64 + 0.5) * spacing).collect();
        Self { centers, spacing }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

fn check_mass(mass: f64, theta: f64) -> Result<()> {
    let deficit = 1.0 - mass;
    if deficit.abs() > MASS_TOL {
        return Err(Error::GridTooNarrow { deficit, theta });
    }
    Ok(())
}

/// Homodyne outcome distribution on a 1D grid.
#[derive(Debug, Clone)]
pub struct HomodyneGrid {
    grid: Grid1,
    dim: usize,
    /// Hermite functions at each cell center, `hermite[i * dim + n]`.
    hermite: Vec<f64>,
    rho: LossyDensityMatrix,
}

impl HomodyneGrid {
    pub fn new(rho: LossyDensityMatrix, grid: Grid1) -> Self {
        let dim = rho.dim();
        let mut hermite = Vec::with_capacity(grid.len() * dim);
        let mut buf = Vec::with_capacity(dim);
        for &x in &grid.centers {
            hermite_functions_into(x, dim, &mut buf);
            hermite.extend_from_slice(&buf);
        }
        Self { grid, dim, hermite, rho }
    }

    pub fn grid(&self) -> &Grid1 {
        &self.grid
    }

    /// Unnormalized cell masses `f1(x_i | theta) dx`.
    pub fn cell_masses(&self, theta: f64) -> Vec<f64> {
        let d = self.dim;
        // f1 = h^T S h with S_nm = Re(rho_nm e^{i (m - n) theta}).
        let m = self.rho.matrix();
        let mut s = vec![0.0; d * d];
        for n in 0..d {
            for k in 0..d {
                s[n * d + k] = (m[(n, k)] * C64::from_polar(1.0, (k as f64 - n as f64) * theta)).re;
            }
        }
        let dx = self.grid.spacing;
        self.hermite
            .chunks_exact(d)
            .map(|h| {
                let mut f = 0.0;
                for (n, row) in s.chunks_exact(d).enumerate() {
                    let t: f64 = row.iter().zip(h).map(|(a, b)| a * b).sum();
                    f += h[n] * t;
                }
                f.max(0.0) * dx
            })
            .collect()
    }

    /// Normalized cell probabilities; errors if the grid misses more than [`MASS_TOL`].
    pub fn cell_probabilities(&self, theta: f64) -> Result<Vec<f64>> {
        let mut p = self.cell_masses(theta);
        let mass: f64 = p.iter().sum();
        check_mass(mass, theta)?;
        for v in &mut p {
            *v /= mass;
        }
        Ok(p)
    }

    /// One multinomial draw, reported at the cell center.
    pub fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<f64> {
        let masses = self.cell_masses(theta);
        let mut cdf = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cdf.push(acc);
        }
        check_mass(acc, theta)?;
        let u = rng.random::<f64>() * acc;
        let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        Ok(self.grid.centers[i])
    }
}

/// Heterodyne outcome distribution on a square 2D grid.
#[derive(Debug, Clone)]
pub struct HeterodyneGrid {
    grid: Grid1,
    dim: usize,
    rho: Vec<C64>,
}

impl HeterodyneGrid {
    pub fn new(rho: LossyDensityMatrix, grid: Grid1) -> Self {
        let dim = rho.dim();
        let m = rho.matrix();
        let rho = (0..dim * dim).map(|k| m[(k / dim, k % dim)]).collect();
        Self { grid, dim, rho }
    }

    pub fn grid(&self) -> &Grid1 {
        &self.grid
    }

    /// `f2(x, p | theta)` at one point.
    pub fn density(&self, x: f64, p: f64, theta: f64, buf: &mut Vec<C64>) -> f64 {
        let d = self.dim;
        let u = C64::new(x, p) * C64::from_polar(1.0, theta);
        buf.clear();
        let mut g = C64::new((-0.5 * (x * x + p * p)).exp() / PI.sqrt(), 0.0);
        for n in 0..d {
            if n > 0 {
                g = g * u / (n as f64).sqrt();
            }
            buf.push(g);
        }
        let mut acc = C64::new(0.0, 0.0);
        for (i, row) in self.rho.chunks_exact(d).enumerate() {
            let mut t = C64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(buf.iter()) {
                t += a * b;
            }
            acc += buf[i].conj() * t;
        }
        acc.re.max(0.0)
    }

    /// Unnormalized masses of all cells, row `i` (x) major.
    pub fn cell_masses(&self, theta: f64) -> Vec<f64> {
        let n = self.grid.len();
        let area = self.grid.spacing * self.grid.spacing;
        let rows = par::map_indexed(Execution::default(), n, |i| {
            let mut buf = Vec::with_capacity(self.dim);
            let x = self.grid.centers[i];
            self.grid.centers.iter().map(|&p| self.density(x, p, theta, &mut buf) * area).collect::<Vec<_>>()
        });
        rows.concat()
    }

    pub fn cell_probabilities(&self, theta: f64) -> Result<Vec<f64>> {
        let mut p = self.cell_masses(theta);
        let mass: f64 = p.iter().sum();
        check_mass(mass, theta)?;
        for v in &mut p {
            *v /= mass;
        }
        Ok(p)
    }

    /// Mass check at phases spanning a quarter turn (the square grid is
    /// symmetric under quarter turns).
    pub fn check_coverage(&self) -> Result<()> {
        let thetas = [0.0, PI / 8.0, PI / 4.0, 3.0 * PI / 8.0];
        let masses = par::map_indexed(Execution::default(), thetas.len(), |k| {
            self.cell_masses(thetas[k]).iter().sum::<f64>()
        });
        for (m, t) in masses.into_iter().zip(thetas) {
            check_mass(m, t)?;
        }
        Ok(())
    }

    /// One draw from the discretized density by rejection, reported at the cell center.
    pub fn draw<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R, buf: &mut Vec<C64>) -> (f64, f64) {
        let n = self.grid.len();
        loop {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let u: f64 = rng.random();
            let (x, p) = (self.grid.centers[i], self.grid.centers[j]);
            if u < PI * self.density(x, p, theta, buf) {
                return (x, p);
            }
        }
    }
}

/// Simulates `K` records from the configured state.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<QuadratureDataset> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let halfwidth = cfg.grid_halfwidth.unwrap_or_else(|| default_halfwidth(mean_photon(&truth)));
    let grid = Grid1::new(halfwidth, cfg.grid_resolution);
    let lossy = apply_loss(&truth, cfg.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.records);
    match cfg.scheme {
        Scheme::Homodyne => {
            let g = HomodyneGrid::new(lossy, grid);
            for _ in 0..cfg.records {
                let theta = rng.random::<f64>() * TAU;
                let x = g.draw(theta, &mut rng)?;
                records.push(QuadratureRecord::homodyne(theta, x));
            }
        }
        Scheme::Heterodyne => {
            let g = HeterodyneGrid::new(lossy, grid);
            g.check_coverage()?;
            let mut buf = Vec::with_capacity(g.dim);
            for _ in 0..cfg.records {
                let theta = rng.random::<f64>() * TAU;
                let (x, p) = g.draw(theta, &mut rng, &mut buf);
                records.push(QuadratureRecord::heterodyne(theta, x, p));
            }
        }
    }
    let mut ds = QuadratureDataset::new(cfg.scheme, records)?;
    ds.metadata.source_id = format!("simulated:{}", cfg.spec.family());
    ds.metadata.provenance = serde_json::to_value(cfg)?;
    Ok(ds)
}

/// Nested-subset scaling study over one state family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// `coherent`, `thermal`, `squeezed` or `fock`.
    pub family: String,
    pub mean_photons: Vec<f64>,
    /// Subset sizes; each subset is a prefix of one dataset per state.
    pub k_subsets: Vec<usize>,
    pub scheme: Scheme,
    pub eta: f64,
    pub cutoff: usize,
    pub sampler: SamplerConfig,
    /// Seed for the simulated datasets.
    pub seed: u64,
    #[serde(default = "default_resolution")]
    pub grid_resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub state: String,
    pub mean_photon: f64,
    pub scheme: Scheme,
    #[serde(rename = "K")]
    pub k: usize,
    pub fid_mean: f64,
    pub fid_std: f64,
}

/// Runs every (state, subset) inference; rows come out state-major, then in
/// the order of `k_subsets`.
pub fn scaling_experiment(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    let k_max = cfg.k_subsets.iter().copied().max().unwrap_or(0);
    if k_max == 0 {
        return Err(Error::InvalidParameter("no K subsets".into()));
    }
    let mcfg = MeasurementConfig::new(cfg.eta, cfg.cutoff)?;
    let mut prepared = Vec::new();
    for (i, &mean) in cfg.mean_photons.iter().enumerate() {
        let spec = StateSpec::with_mean_photon(&cfg.family, mean)?;
        let mut sim = SimConfig::new(spec, cfg.scheme, k_max, cfg.eta, cfg.cutoff, cfg.seed.wrapping_add(i as u64));
        sim.grid_resolution = cfg.grid_resolution;
        let data = simulate_dataset(&sim)?;
        let truth = FidelityReference::new(&sim.truth()?)?;
        prepared.push((mean, data, truth));
    }
    let jobs: Vec<(usize, usize)> =
        (0..prepared.len()).flat_map(|s| cfg.k_subsets.iter().map(move |&k| (s, k))).collect();
    let rows = par::map_indexed(Execution::default(), jobs.len(), |j| -> Result<ScalingRow> {
        let (s, k) = jobs[j];
        let (mean, data, truth) = &prepared[s];
        let ens = run_chain(&data.prefix(k), &mcfg, &cfg.sampler)?;
        let stats = estimate_functional(&ens, |rho| truth.fidelity(rho).unwrap_or(f64::NAN))?;
        if stats.mean.is_nan() {
            return Err(Error::InvalidDensity("fidelity evaluation failed".into()));
        }
        Ok(ScalingRow {
            state: cfg.family.clone(),
            mean_photon: *mean,
            scheme: cfg.scheme,
            k,
            fid_mean: stats.mean,
            fid_std: stats.std,
        })
    });
    rows.into_iter().collect()
}

/// CSV `state,mean_photon,scheme,K,fid_mean,fid_std`.
pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state", "mean_photon", "scheme", "K", "fid_mean", "fid_std"])?;
    for r in rows {
        w.write_record(&[
            r.state.clone(),
            r.mean_photon.to_string(),
            r.scheme.short().to_string(),
            r.k.to_string(),
            r.fid_mean.to_string(),
            r.fid_std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::Parity;

    #[test]
    fn grid_geometry() {
        let g = Grid1::new(1.0, 0.5);
        assert_eq!(g.centers, [-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(default_halfwidth(0.0), 6.0);
    }

    #[test]
    fn homodyne_probabilities_normalized() {
        let rho = LossyDensityMatrix::lossless(
            make_state(&StateSpec::Cat { alpha: C64::new(1.2, 0.3), parity: Parity::Odd }, 10).unwrap(),
        );
        let g = HomodyneGrid::new(rho, Grid1::new(default_halfwidth(1.5), DEFAULT_RESOLUTION));
        for theta in [0.0, 1.0, 2.5] {
            let raw: f64 = g.cell_masses(theta).iter().sum();
            assert!((raw - 1.0).abs() < 1e-9, "{raw}");
            let p = g.cell_probabilities(theta).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn narrow_grid_rejected() {
        let rho = LossyDensityMatrix::lossless(make_state(&StateSpec::Thermal { mu: 1.0 }, 10).unwrap());
        let g = HomodyneGrid::new(rho.clone(), Grid1::new(2.0, DEFAULT_RESOLUTION));
        assert!(matches!(g.cell_probabilities(0.3), Err(Error::GridTooNarrow { .. })));
        let h = HeterodyneGrid::new(rho, Grid1::new(2.0, 0.1));
        assert!(matches!(h.check_coverage(), Err(Error::GridTooNarrow { .. })));
        let mut cfg = SimConfig::new(StateSpec::Thermal { mu: 1.0 }, Scheme::Homodyne, 5, 1.0, 10, 0);
        cfg.grid_halfwidth = Some(2.0);
        assert!(simulate_dataset(&cfg).is_err());
    }

    #[test]
    fn heterodyne_bound_holds() {
        let rho = LossyDensityMatrix::lossless(make_state(&StateSpec::Fock { n: 3 }, 6).unwrap());
        let g = HeterodyneGrid::new(rho, Grid1::new(default_halfwidth(3.0), 0.2));
        let mut buf = Vec::new();
        let max = g.cell_masses(0.4).iter().fold(0.0f64, |a, &b| a.max(b)) / 0.04;
        assert!(max <= 1.0 / PI);
        g.check_coverage().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, p) = g.draw(0.4, &mut rng, &mut buf);
        assert!(g.grid().centers.contains(&x) && g.grid().centers.contains(&p));
    }

    #[test]
    fn deterministic_and_nested() {
        let cfg = SimConfig::new(StateSpec::Coherent { alpha: C64::new(0.7, -0.2) }, Scheme::Heterodyne, 50, 0.9, 6, 42);
        let a = simulate_dataset(&cfg).unwrap();
        let b = simulate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let mut longer = cfg.clone();
        longer.records = 80;
        let c = simulate_dataset(&longer).unwrap();
        assert_eq!(c.records()[..50], a.records()[..]);
        assert!(a.records().iter().all(|r| (0.0..TAU).contains(&r.theta)));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SimConfig::new(StateSpec::vacuum(), Scheme::Homodyne, 0, 1.0, 4, 0);
        assert!(simulate_dataset(&cfg).is_err());
        cfg.records = 3;
        cfg.grid_resolution = 0.0;
        assert!(simulate_dataset(&cfg).is_err());
    }
}

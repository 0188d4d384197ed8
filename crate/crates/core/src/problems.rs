//! The six benchmark problems and the run manifest that configures them.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::BoundarySpec;
use crate::mesh::{DomainBox, Face};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemId {
    Poisson1d,
    Poisson2d,
    Poisson3d,
    AllenCahn1d,
    Schrodinger1d,
    Schrodinger2d,
}

impl ProblemId {
    pub const ALL: [ProblemId; 6] = [
        ProblemId::Poisson1d,
        ProblemId::Poisson2d,
        ProblemId::Poisson3d,
        ProblemId::AllenCahn1d,
        ProblemId::Schrodinger1d,
        ProblemId::Schrodinger2d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::Poisson1d => "poisson1d",
            ProblemId::Poisson2d => "poisson2d",
            ProblemId::Poisson3d => "poisson3d",
            ProblemId::AllenCahn1d => "allen_cahn1d",
            ProblemId::Schrodinger1d => "schrodinger1d",
            ProblemId::Schrodinger2d => "schrodinger2d",
        }
    }

    pub fn is_poisson(self) -> bool {
        matches!(self, ProblemId::Poisson1d | ProblemId::Poisson2d | ProblemId::Poisson3d)
    }

    pub fn is_schrodinger(self) -> bool {
        matches!(self, ProblemId::Schrodinger1d | ProblemId::Schrodinger2d)
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown problem `{s}`")))
    }
}

/// Collocation counts: interior, boundary and initial-time samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollocationCounts {
    pub interior: usize,
    pub boundary: usize,
    pub initial: usize,
}

/// Definition of one benchmark problem.
///
/// Inputs of the network and of evolution ground truths are ordered `(t, x, y, ...)`;
/// stationary problems take `(x, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: ProblemId,
    /// Spatial domain.
    pub domain: DomainBox,
    /// Final time; 0 for stationary problems.
    pub horizon: f64,
    /// Allen–Cahn interface parameter.
    pub epsilon: f64,
    /// Coefficient of the Laplacian in the Schrödinger residual.
    pub diffusion: f64,
    /// Weight of the initial-condition loss term.
    pub ic_weight: f64,
    pub counts: CollocationCounts,
    /// Adds the `u_I(0, .) = 0` term to the 2D Schrödinger loss.
    pub imag_ic_term: bool,
}

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

impl ProblemSpec {
    pub fn new(id: ProblemId) -> Self {
        let counts = |interior, boundary, initial| CollocationCounts { interior, boundary, initial };
        let (domain, horizon, epsilon, diffusion, ic_weight, c) = match id {
            ProblemId::Poisson1d => (DomainBox::unit(1), 0.0, 0.0, 0.0, 1.0, counts(256, 1, 0)),
            ProblemId::Poisson2d => (DomainBox::unit(2), 0.0, 0.0, 0.0, 1.0, counts(2000, 250, 0)),
            ProblemId::Poisson3d => (DomainBox::unit(3), 0.0, 0.0, 0.0, 1.0, counts(1000, 100, 0)),
            ProblemId::AllenCahn1d => (DomainBox::unit(1), 0.05, 0.01, 0.0, 1000.0, counts(20_000, 250, 500)),
            ProblemId::Schrodinger1d => {
                (DomainBox::cube(1, -5.0, 5.0), PI / 2.0, 0.0, 0.5, 1.0, counts(20_000, 50, 50))
            }
            ProblemId::Schrodinger2d => {
                (DomainBox::cube(2, -5.0, 5.0), PI / 2.0, 0.0, 0.5, 1.0, counts(5000, 100, 100))
            }
        };
        ProblemSpec { id, domain, horizon, epsilon, diffusion, ic_weight, counts: c, imag_ic_term: false }
    }

    pub fn all() -> Vec<ProblemSpec> {
        ProblemId::ALL.into_iter().map(ProblemSpec::new).collect()
    }

    pub fn is_evolution(&self) -> bool {
        !self.id.is_poisson()
    }

    pub fn spatial_dim(&self) -> usize {
        self.domain.dim()
    }

    /// Network input width: space plus time for evolution problems.
    pub fn input_dim(&self) -> usize {
        self.spatial_dim() + usize::from(self.is_evolution())
    }

    pub fn output_dim(&self) -> usize {
        if self.id.is_schrodinger() {
            2
        } else {
            1
        }
    }

    /// Right-hand side `f` of `Δu = f` (Poisson problems; zero otherwise).
    pub fn source(&self, x: &[f64]) -> f64 {
        match self.id {
            ProblemId::Poisson1d => {
                let x = x[0];
                (4.0 * x.powi(3) - 6.0 * x) * (-x * x).exp()
            }
            ProblemId::Poisson2d => {
                let (x, y) = (x[0], x[1]);
                let ym = (y - 1.0) * (y - 1.0);
                2.0 * (x.powi(4) * (3.0 * y - 2.0)
                    + x.powi(3) * (4.0 - 6.0 * y)
                    + x * x * (6.0 * y.powi(3) - 12.0 * y * y + 9.0 * y - 2.0)
                    - 6.0 * x * ym * y
                    + ym * y)
            }
            ProblemId::Poisson3d => -3.0 * PI * PI * x.iter().map(|&v| (PI * v).sin()).product::<f64>(),
            _ => 0.0,
        }
    }

    /// Closed-form solution, available for the Poisson problems only.
    pub fn analytic(&self, x: &[f64]) -> Option<f64> {
        match self.id {
            ProblemId::Poisson1d => Some(x[0] * (-x[0] * x[0]).exp()),
            ProblemId::Poisson2d => {
                let (x, y) = (x[0], x[1]);
                Some(x * x * (x - 1.0).powi(2) * y * (y - 1.0).powi(2))
            }
            ProblemId::Poisson3d => Some(x.iter().map(|&v| (PI * v).sin()).product()),
            _ => None,
        }
    }

    /// Initial state `(real, imaginary)` at spatial point `x`.
    pub fn initial_condition(&self, x: &[f64]) -> [f64; 2] {
        match self.id {
            ProblemId::AllenCahn1d => {
                let x = x[0];
                [0.5 * (0.5 * (2.0 * PI * x).sin() + 0.5 * (16.0 * PI * x).sin()) + 0.5, 0.0]
            }
            ProblemId::Schrodinger1d => [2.0 * sech(x[0]), 0.0],
            ProblemId::Schrodinger2d => [sech(x[0]) + 0.5 * sech(x[1] - 2.0) + 0.5 * sech(x[1] + 2.0), 0.0],
            _ => [0.0, 0.0],
        }
    }

    /// Boundary conditions of the finite element formulation.
    pub fn fem_boundary(&self) -> BoundarySpec {
        match self.id {
            ProblemId::Poisson1d => {
                let right = (-1.0f64).exp();
                BoundarySpec::new().dirichlet(Face::lower(0), |_| 0.0).dirichlet(Face::upper(0), move |_| right)
            }
            // u(x, 0) = 0; the other three faces carry homogeneous Neumann data.
            ProblemId::Poisson2d => BoundarySpec::new().dirichlet(Face::lower(1), |_| 0.0),
            ProblemId::Poisson3d => Face::all(3).fold(BoundarySpec::new(), |b, f| b.dirichlet(f, |_| 0.0)),
            ProblemId::AllenCahn1d | ProblemId::Schrodinger1d => BoundarySpec::new().periodic(0),
            ProblemId::Schrodinger2d => BoundarySpec::new().periodic(0).periodic(1),
        }
    }

    /// Number of equally spaced output times in `(0, T]` used for evaluation.
    pub fn snapshot_count(&self) -> usize {
        match self.id {
            ProblemId::AllenCahn1d => 5,
            ProblemId::Schrodinger1d | ProblemId::Schrodinger2d => 4,
            _ => 0,
        }
    }

    /// Time grid for a nominal step: the step count is rounded to the
    /// nearest integer and then up to a multiple of the snapshot count, so
    /// every snapshot falls on a step.
    pub fn time_grid(&self, nominal_dt: f64) -> Result<TimeGrid> {
        if !self.is_evolution() {
            return Err(Error::invalid(format!("{} has no time axis", self.id)));
        }
        if !(nominal_dt > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        let snaps = self.snapshot_count();
        let raw = (self.horizon / nominal_dt).round().max(1.0) as usize;
        let steps = raw.div_ceil(snaps) * snaps;
        Ok(TimeGrid { horizon: self.horizon, steps, snapshots: snaps })
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub snapshots: usize,
}

impl TimeGrid {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Step indices of the snapshots `T * k / snapshots`, `k = 1..=snapshots`.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        (1..=self.snapshots).map(|k| k * self.steps / self.snapshots).collect()
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        (1..=self.snapshots).map(|k| self.horizon * k as f64 / self.snapshots as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(Error::invalid(format!("unknown scale `{s}`"))),
        }
    }
}

/// Fine implicit-Euler reference resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineResolution {
    pub n: usize,
    pub dt: f64,
}

/// Per-problem entry of the manifest; each scalable quantity has a paper and a desk value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: ProblemId,
    pub architectures: Vec<Vec<usize>>,
    pub desk_architectures: Vec<Vec<usize>>,
    pub adam_epochs: usize,
    /// Adam epochs on the initial-condition loss alone before the full loss.
    pub ic_epochs: usize,
    pub learning_rate: f64,
    pub counts: CollocationCounts,
    pub desk_counts: CollocationCounts,
    pub fem_meshes: Vec<usize>,
    pub desk_fem_meshes: Vec<usize>,
    /// Benchmark time step for evolution problems.
    pub dt: Option<f64>,
    /// Evaluation grid points per axis.
    pub eval_grid: usize,
    pub desk_eval_grid: usize,
    pub ground_truth: Option<FineResolution>,
    pub desk_ground_truth: Option<FineResolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    /// Multiplier applied to epoch counts at desk scale.
    pub desk_epoch_factor: f64,
    pub lbfgs_iters: usize,
    pub desk_lbfgs_iters: usize,
    pub lbfgs_grad_tol: f64,
    pub problems: Vec<ManifestEntry>,
}

fn widths(hidden: usize, layers: usize, out: usize) -> Vec<usize> {
    let mut v = vec![hidden; layers];
    v.push(out);
    v
}

impl Default for Manifest {
    fn default() -> Self {
        let ac_sizes = |out: usize, list: &[(usize, usize)]| list.iter().map(|&(w, l)| widths(w, l, out)).collect();
        let c = |interior, boundary, initial| CollocationCounts { interior, boundary, initial };
        let problems = vec![
            ManifestEntry {
                id: ProblemId::Poisson1d,
                architectures: vec![
                    vec![1, 1],
                    vec![2, 1],
                    vec![5, 1],
                    vec![10, 1],
                    vec![20, 1],
                    vec![40, 1],
                    vec![5, 5, 1],
                    vec![10, 10, 1],
                    vec![20, 20, 1],
                    vec![40, 40, 1],
                    vec![5, 5, 5, 1],
                    vec![10, 10, 10, 1],
                    vec![20, 20, 20, 1],
                    vec![40, 40, 40, 1],
                ],
                desk_architectures: vec![vec![10, 1], vec![20, 20, 1], vec![20, 20, 20, 1]],
                adam_epochs: 15_000,
                ic_epochs: 0,
                learning_rate: 1e-4,
                counts: c(256, 1, 0),
                desk_counts: c(256, 1, 0),
                fem_meshes: vec![64, 128, 256, 512, 1024, 2048, 4096],
                desk_fem_meshes: vec![64, 128, 256, 512, 1024, 2048, 4096],
                dt: None,
                eval_grid: 512,
                desk_eval_grid: 512,
                ground_truth: None,
                desk_ground_truth: None,
            },
            ManifestEntry {
                id: ProblemId::Poisson2d,
                architectures: ac_sizes(
                    1,
                    &[(20, 1), (60, 1), (20, 2), (60, 2), (20, 3), (60, 3), (20, 4), (60, 4), (20, 5), (60, 5), (120, 5)],
                ),
                desk_architectures: vec![vec![20, 1], vec![20, 20, 1], vec![20, 20, 20, 1]],
                adam_epochs: 20_000,
                ic_epochs: 0,
                learning_rate: 1e-3,
                counts: c(2000, 250, 0),
                desk_counts: c(2000, 250, 0),
                fem_meshes: (1..=10).map(|k| 100 * k).collect(),
                desk_fem_meshes: vec![50, 100, 200],
                dt: None,
                eval_grid: 2000,
                desk_eval_grid: 200,
                ground_truth: None,
                desk_ground_truth: None,
            },
            ManifestEntry {
                id: ProblemId::Poisson3d,
                architectures: ac_sizes(1, &[(20, 2), (60, 2), (20, 3), (60, 3), (20, 4), (60, 4), (20, 5), (60, 5)]),
                desk_architectures: vec![vec![20, 20, 1], vec![20, 20, 20, 1], vec![60, 60, 1]],
                adam_epochs: 20_000,
                ic_epochs: 0,
                learning_rate: 1e-3,
                counts: c(1000, 100, 0),
                desk_counts: c(1000, 100, 0),
                fem_meshes: vec![16, 32, 64, 128],
                desk_fem_meshes: vec![8, 16, 32],
                dt: None,
                eval_grid: 150,
                desk_eval_grid: 50,
                ground_truth: None,
                desk_ground_truth: None,
            },
            ManifestEntry {
                id: ProblemId::AllenCahn1d,
                architectures: ac_sizes(
                    1,
                    &[
                        (20, 3),
                        (100, 3),
                        (500, 3),
                        (20, 4),
                        (100, 4),
                        (500, 4),
                        (20, 5),
                        (100, 5),
                        (500, 5),
                        (20, 6),
                        (100, 6),
                        (500, 6),
                        (20, 7),
                        (100, 7),
                    ],
                ),
                desk_architectures: ac_sizes(1, &[(20, 3), (20, 4), (20, 5)]),
                adam_epochs: 50_000,
                ic_epochs: 7000,
                learning_rate: 1e-4,
                counts: c(20_000, 250, 500),
                desk_counts: c(2000, 250, 500),
                fem_meshes: vec![32, 128, 512, 2048],
                desk_fem_meshes: vec![32, 128, 512],
                dt: Some(1e-3),
                eval_grid: 7993,
                desk_eval_grid: 1024,
                ground_truth: Some(FineResolution { n: 7992, dt: 1e-4 / 3.0 }),
                desk_ground_truth: Some(FineResolution { n: 2048, dt: 2.5e-4 }),
            },
            ManifestEntry {
                id: ProblemId::Schrodinger1d,
                architectures: ac_sizes(2, &[(20, 3), (100, 3), (20, 4), (100, 4), (20, 5), (100, 5), (20, 6), (100, 6)]),
                desk_architectures: ac_sizes(2, &[(20, 3), (20, 4), (20, 5)]),
                adam_epochs: 50_000,
                ic_epochs: 0,
                learning_rate: 1e-4,
                counts: c(20_000, 50, 50),
                desk_counts: c(2000, 50, 50),
                fem_meshes: vec![32, 128, 512, 2048],
                desk_fem_meshes: vec![32, 128, 512],
                dt: Some(1e-3),
                eval_grid: 7993,
                desk_eval_grid: 1024,
                ground_truth: Some(FineResolution { n: 7992, dt: 1e-4 / 3.0 }),
                desk_ground_truth: Some(FineResolution { n: 2048, dt: 2.5e-4 }),
            },
            ManifestEntry {
                id: ProblemId::Schrodinger2d,
                architectures: ac_sizes(2, &[(20, 3), (100, 3), (20, 4), (100, 4), (20, 5), (100, 5)]),
                desk_architectures: ac_sizes(2, &[(20, 3), (20, 4), (20, 5)]),
                adam_epochs: 50_000,
                ic_epochs: 0,
                learning_rate: 1e-3,
                counts: c(5000, 100, 100),
                desk_counts: c(500, 100, 100),
                fem_meshes: vec![16, 32, 40, 64, 128],
                desk_fem_meshes: vec![16, 32],
                dt: Some(1e-3),
                eval_grid: 128,
                desk_eval_grid: 32,
                ground_truth: Some(FineResolution { n: 256, dt: 2.5e-4 }),
                desk_ground_truth: Some(FineResolution { n: 64, dt: 1e-3 }),
            },
        ];
        Manifest {
            schema_version: "v1".into(),
            desk_epoch_factor: 0.1,
            lbfgs_iters: 500,
            desk_lbfgs_iters: 200,
            lbfgs_grad_tol: 1e-9,
            problems,
        }
    }
}

/// Everything needed to run one problem at a fixed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub problem: ProblemSpec,
    pub scale: Scale,
    pub architectures: Vec<Vec<usize>>,
    pub adam_epochs: usize,
    pub ic_epochs: usize,
    pub learning_rate: f64,
    pub lbfgs_iters: usize,
    pub lbfgs_grad_tol: f64,
    pub fem_meshes: Vec<usize>,
    pub dt: Option<f64>,
    pub eval_grid: usize,
    pub ground_truth: Option<FineResolution>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.problems {
            let out = ProblemSpec::new(e.id).output_dim();
            for a in e.architectures.iter().chain(&e.desk_architectures) {
                if a.len() < 2 || a.contains(&0) || *a.last().unwrap() != out {
                    return Err(Error::invalid(format!("{}: bad architecture {a:?}", e.id)));
                }
            }
            if e.fem_meshes.is_empty() || e.desk_fem_meshes.contains(&0) || e.fem_meshes.contains(&0) {
                return Err(Error::invalid(format!("{}: empty or zero mesh list", e.id)));
            }
            if e.id.is_poisson() == e.dt.is_some() {
                return Err(Error::invalid(format!("{}: time step must be given iff the problem evolves", e.id)));
            }
            for (gt, meshes) in [(&e.ground_truth, &e.fem_meshes), (&e.desk_ground_truth, &e.desk_fem_meshes)] {
                if let Some(gt) = gt {
                    if meshes.iter().any(|&n| n >= gt.n) {
                        return Err(Error::invalid(format!("{}: reference mesh must be finer than every benchmark mesh", e.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: ProblemId) -> Result<&ManifestEntry> {
        self.problems.iter().find(|e| e.id == id).ok_or_else(|| Error::invalid(format!("{id} missing from manifest")))
    }

    pub fn plan(&self, id: ProblemId, scale: Scale) -> Result<RunPlan> {
        let e = self.entry(id)?;
        let mut problem = ProblemSpec::new(id);
        let desk = scale == Scale::Desk;
        let scaled = |n: usize| if desk { (n as f64 * self.desk_epoch_factor).round() as usize } else { n };
        problem.counts = if desk { e.desk_counts } else { e.counts };
        Ok(RunPlan {
            problem,
            scale,
            architectures: if desk { e.desk_architectures.clone() } else { e.architectures.clone() },
            adam_epochs: scaled(e.adam_epochs),
            ic_epochs: scaled(e.ic_epochs),
            learning_rate: e.learning_rate,
            lbfgs_iters: if desk { self.desk_lbfgs_iters } else { self.lbfgs_iters },
            lbfgs_grad_tol: self.lbfgs_grad_tol,
            fem_meshes: if desk { e.desk_fem_meshes.clone() } else { e.fem_meshes.clone() },
            dt: e.dt,
            eval_grid: if desk { e.desk_eval_grid } else { e.eval_grid },
            ground_truth: if desk { e.desk_ground_truth } else { e.ground_truth },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ProblemId::ALL {
            assert_eq!(id.as_str().parse::<ProblemId>().unwrap(), id);
            assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{}\"", id.as_str()));
        }
        assert!("heat1d".parse::<ProblemId>().is_err());
    }

    #[test]
    fn poisson_sources_match_analytic_laplacians() {
        // Hand-differentiated Laplacians of the closed forms.
        let p1 = ProblemSpec::new(ProblemId::Poisson1d);
        let p2 = ProblemSpec::new(ProblemId::Poisson2d);
        let p3 = ProblemSpec::new(ProblemId::Poisson3d);
        for k in 0..20 {
            let x = (k as f64 + 0.3) / 20.0;
            let y = ((k * 7) % 20) as f64 / 20.0 + 0.01;
            let z = ((k * 3) % 20) as f64 / 20.0 + 0.02;
            let lap1 = (4.0 * x.powi(3) - 6.0 * x) * (-x * x).exp();
            assert!((p1.source(&[x]) - lap1).abs() < 1e-14);
            let lap2 = (12.0 * x * x - 12.0 * x + 2.0) * y * (y - 1.0).powi(2)
                + x * x * (x - 1.0).powi(2) * (6.0 * y - 4.0);
            assert!((p2.source(&[x, y]) - lap2).abs() < 1e-13);
            let u3 = p3.analytic(&[x, y, z]).unwrap();
            assert!((p3.source(&[x, y, z]) + 3.0 * PI * PI * u3).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_values() {
        let p1 = ProblemSpec::new(ProblemId::Poisson1d);
        assert_eq!(p1.analytic(&[1.0]).unwrap(), (-1.0f64).exp());
        assert_eq!(p1.analytic(&[0.0]).unwrap(), 0.0);
        let p3 = ProblemSpec::new(ProblemId::Poisson3d);
        assert!((p3.analytic(&[0.5; 3]).unwrap() - 1.0).abs() < 1e-15);
        for id in ProblemId::ALL {
            let p = ProblemSpec::new(id);
            let x = vec![0.1; p.spatial_dim()];
            assert_eq!(p.analytic(&x).is_some(), id.is_poisson());
        }
    }

    #[test]
    fn two_d_solution_maximum() {
        // Maximizers: x = 1/2 and y = 1/3 (roots of the derivative factors).
        let p = ProblemSpec::new(ProblemId::Poisson2d);
        let peak = p.analytic(&[0.5, 1.0 / 3.0]).unwrap();
        assert!((peak - 1.0 / 16.0 * 4.0 / 27.0).abs() < 1e-15);
        assert!(peak < 0.02);
    }

    #[test]
    fn allen_cahn_constants() {
        let p = ProblemSpec::new(ProblemId::AllenCahn1d);
        assert_eq!(p.ic_weight, 1000.0);
        assert_eq!(p.epsilon, 0.01);
        assert_eq!(p.horizon, 0.05);
        assert!((p.initial_condition(&[0.0])[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn time_grid_hits_snapshots() {
        let ac = ProblemSpec::new(ProblemId::AllenCahn1d);
        let g = ac.time_grid(1e-3).unwrap();
        assert_eq!(g.steps, 50);
        assert!((g.dt() - 1e-3).abs() < 1e-15);
        assert_eq!(g.snapshot_steps(), vec![10, 20, 30, 40, 50]);
        let s = ProblemSpec::new(ProblemId::Schrodinger1d);
        let g = s.time_grid(1e-3).unwrap();
        assert_eq!(g.steps % 4, 0);
        assert!((g.dt() - 1e-3).abs() < 1e-6);
        assert!(ProblemSpec::new(ProblemId::Poisson1d).time_grid(1e-3).is_err());
    }

    #[test]
    fn manifest_round_trip_and_scaling() {
        let m = Manifest::default();
        m.validate().unwrap();
        let back = Manifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let desk = m.plan(ProblemId::Poisson1d, Scale::Desk).unwrap();
        assert_eq!(desk.adam_epochs, 1500);
        assert_eq!(desk.problem.counts.interior, 256);
        let ac = m.plan(ProblemId::AllenCahn1d, Scale::Desk).unwrap();
        assert_eq!((ac.ic_epochs, ac.adam_epochs), (700, 5000));
        let paper = m.plan(ProblemId::AllenCahn1d, Scale::Paper).unwrap();
        assert_eq!((paper.ic_epochs, paper.adam_epochs), (7000, 50_000));
        assert_eq!(m.entry(ProblemId::AllenCahn1d).unwrap().architectures.len(), 14);
        assert_eq!(m.entry(ProblemId::Poisson2d).unwrap().architectures.len(), 11);
        assert_eq!(m.entry(ProblemId::Poisson3d).unwrap().architectures.len(), 8);
    }

    #[test]
    fn manifest_rejects_coarse_reference() {
        let mut m = Manifest::default();
        m.problems[3].desk_ground_truth = Some(FineResolution { n: 512, dt: 1e-3 });
        assert!(m.validate().is_err());
        let mut m = Manifest::default();
        m.problems[0].desk_architectures.push(vec![5, 2]);
        assert!(m.validate().is_err());
    }
}

//! P1 finite elements on the structured simplex meshes.
//!
//! Quadrature rules used for load terms integrate polynomials of degree 2
//! exactly: 2-point Gauss on intervals, the edge-midpoint rule on triangles
//! and the symmetric 4-point rule on tetrahedra. Terms that depend
//! nonlinearly on a discrete field use a higher-order rule (3-point Gauss on
//! intervals, 6-point degree-4 rule on triangles).

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Face, Mesh};
use crate::problems::ProblemSpec;
use crate::sparse::{cg_solve, ilu0_factor, CsrMatrix, KrylovOptions};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Volume and barycentric-coordinate gradients of one simplex.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub volume: f64,
    pub grads: [[f64; 3]; 4],
}

pub fn cell_geometry(mesh: &Mesh, c: usize) -> Result<CellGeometry> {
    let d = mesh.dim();
    let cell = mesh.cell(c);
    let x0 = mesh.node(cell[0]);
    // jac[r] = x_{r+1} - x_0; rows of the inverse-transpose give grad(lambda_{r+1}).
    let mut jac = [[0.0f64; 3]; 3];
    for r in 0..d {
        let x = mesh.node(cell[r + 1]);
        for a in 0..d {
            jac[r][a] = x[a] - x0[a];
        }
    }
    let signed = mesh.signed_volume(c);
    let scale: f64 = (0..d).map(|a| mesh.spacing(a)).product();
    if !(signed.abs() > 1e-14 * scale) {
        return Err(Error::SingularGeometry { cell: c, volume: signed });
    }
    let mut grads = [[0.0f64; 3]; 4];
    match d {
        1 => {
            grads[1][0] = 1.0 / jac[0][0];
        }
        2 => {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            // inverse of J (rows = edge vectors) transposed: grad(lambda_r) = column r of J^{-1}
            grads[1] = [jac[1][1] / det, -jac[1][0] / det, 0.0];
            grads[2] = [-jac[0][1] / det, jac[0][0] / det, 0.0];
        }
        _ => {
            let j = &jac;
            let det = 6.0 * signed;
            // Columns of J^{-1} are cross products of the other two edge vectors.
            let cross = |a: [f64; 3], b: [f64; 3]| {
                [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
            };
            let c1 = cross(j[1], j[2]);
            let c2 = cross(j[2], j[0]);
            let c3 = cross(j[0], j[1]);
            for a in 0..3 {
                grads[1][a] = c1[a] / det;
                grads[2][a] = c2[a] / det;
                grads[3][a] = c3[a] / det;
            }
        }
    }
    for a in 0..d {
        grads[0][a] = -(1..=d).map(|r| grads[r][a]).sum::<f64>();
    }
    Ok(CellGeometry { volume: signed.abs(), grads })
}

/// Local stiffness `int grad(phi_i) . grad(phi_j)`, row-major `(d+1) x (d+1)`.
pub fn element_stiffness(mesh: &Mesh, c: usize) -> Result<Vec<f64>> {
    let g = cell_geometry(mesh, c)?;
    let k = mesh.dim() + 1;
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let dot: f64 = (0..mesh.dim()).map(|a| g.grads[i][a] * g.grads[j][a]).sum();
            out[i * k + j] = g.volume * dot;
        }
    }
    Ok(out)
}

/// Local mass `int phi_i phi_j`, row-major `(d+1) x (d+1)`.
pub fn element_mass(mesh: &Mesh, c: usize) -> Result<Vec<f64>> {
    let g = cell_geometry(mesh, c)?;
    let k = mesh.dim() + 1;
    let base = g.volume / ((k * (k + 1)) as f64);
    let mut out = vec![base; k * k];
    for i in 0..k {
        out[i * k + i] = 2.0 * base;
    }
    Ok(out)
}

/// Quadrature on the reference simplex in barycentric coordinates; weights sum to 1.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Degree-2 rule used for load vectors.
    pub fn load(dim: usize) -> Self {
        match dim {
            1 => {
                let a = 0.5 - 0.5 / 3f64.sqrt();
                QuadratureRule { points: vec![[1.0 - a, a, 0.0, 0.0], [a, 1.0 - a, 0.0, 0.0]], weights: vec![0.5, 0.5] }
            }
            2 => QuadratureRule {
                points: vec![[0.5, 0.5, 0.0, 0.0], [0.0, 0.5, 0.5, 0.0], [0.5, 0.0, 0.5, 0.0]],
                weights: vec![1.0 / 3.0; 3],
            },
            _ => {
                let a = 0.585_410_196_624_968_5;
                let b = 0.138_196_601_125_010_5;
                QuadratureRule {
                    points: vec![[a, b, b, b], [b, a, b, b], [b, b, a, b], [b, b, b, a]],
                    weights: vec![0.25; 4],
                }
            }
        }
    }

    /// Higher-order rule for field-dependent nonlinear integrands.
    /// Degree 5 on intervals, degree 4 on triangles; tetrahedra fall back to the load rule.
    pub fn nonlinear(dim: usize) -> Self {
        match dim {
            1 => {
                let s = (0.6f64).sqrt();
                let nodes = [0.5 * (1.0 - s), 0.5, 0.5 * (1.0 + s)];
                QuadratureRule {
                    points: nodes.iter().map(|&x| [1.0 - x, x, 0.0, 0.0]).collect(),
                    weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
                }
            }
            2 => {
                let (a1, w1) = (0.445_948_490_915_965, 0.223_381_589_678_011);
                let (a2, w2) = (0.091_576_213_509_771, 0.109_951_743_655_322);
                let mut points = Vec::new();
                let mut weights = Vec::new();
                for (a, w) in [(a1, w1), (a2, w2)] {
                    let b = 1.0 - 2.0 * a;
                    points.extend([[a, a, b, 0.0], [a, b, a, 0.0], [b, a, a, 0.0]]);
                    weights.extend([w; 3]);
                }
                QuadratureRule { points, weights }
            }
            _ => Self::load(dim),
        }
    }
}

/// Map from mesh nodes to degrees of freedom; periodic faces merge nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    node_to_dof: Vec<usize>,
    /// One node per dof (the lowest-index node mapped to it).
    representative: Vec<usize>,
}

impl DofMap {
    pub fn identity(mesh: &Mesh) -> Self {
        let n = mesh.num_nodes();
        DofMap { node_to_dof: (0..n).collect(), representative: (0..n).collect() }
    }

    /// Identifies each node on the upper face of every axis in `axes` with its
    /// partner on the lower face.
    pub fn periodic(mesh: &Mesh, axes: &[usize]) -> Result<Self> {
        let d = mesh.dim();
        for &a in axes {
            if a >= d {
                return Err(Error::PeriodicPairing(format!("axis {a} does not exist in a {d}-d mesh")));
            }
        }
        let np = mesh.divisions() + 1;
        let stride = |a: usize| np.pow(a as u32);
        let n_nodes = mesh.num_nodes();
        // Follow each node to its master: replace upper-face lattice index by 0 on every periodic axis.
        let master: Vec<usize> = (0..n_nodes)
            .map(|node| {
                let mut m = node;
                for &a in axes {
                    let idx = (node / stride(a)) % np;
                    if idx == np - 1 {
                        m -= (np - 1) * stride(a);
                    }
                }
                m
            })
            .collect();
        let mut node_to_dof = vec![usize::MAX; n_nodes];
        let mut representative = Vec::new();
        for node in 0..n_nodes {
            let m = master[node];
            if node_to_dof[m] == usize::MAX {
                node_to_dof[m] = representative.len();
                representative.push(m);
            }
            node_to_dof[node] = node_to_dof[m];
        }
        Ok(DofMap { node_to_dof, representative })
    }

    pub fn num_dofs(&self) -> usize {
        self.representative.len()
    }

    pub fn dof(&self, node: usize) -> usize {
        self.node_to_dof[node]
    }

    pub fn representative(&self, dof: usize) -> usize {
        self.representative[dof]
    }

    /// Nodal values from dof values.
    pub fn expand(&self, dof_values: &[f64]) -> Vec<f64> {
        self.node_to_dof.iter().map(|&d| dof_values[d]).collect()
    }

    /// Dof values from nodal values (taking the representative node).
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.representative.iter().map(|&n| nodal[n]).collect()
    }
}

/// Mesh plus dof numbering plus the CSR pattern of the P1 operators.
#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: Arc<Mesh>,
    dofs: DofMap,
    pattern: CsrMatrix<f64>,
}

impl FemSpace {
    pub fn new(mesh: Arc<Mesh>, dofs: DofMap) -> Self {
        let n = dofs.num_dofs();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        let k = mesh.dim() + 1;
        for c in 0..mesh.num_cells() {
            let cell = mesh.cell(c);
            for i in 0..k {
                let di = dofs.dof(cell[i]);
                for j in 0..k {
                    rows[di].push(dofs.dof(cell[j]));
                }
            }
        }
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }
        let pattern = CsrMatrix::from_pattern(&rows);
        FemSpace { mesh, dofs, pattern }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn num_dofs(&self) -> usize {
        self.dofs.num_dofs()
    }

    /// Zero matrix carrying the P1 sparsity pattern.
    pub fn empty_matrix(&self) -> CsrMatrix<f64> {
        self.pattern.clone()
    }

    fn local_dofs(&self, c: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for (o, &v) in out.iter_mut().zip(self.mesh.cell(c)) {
            *o = self.dofs.dof(v);
        }
        out
    }

    fn assemble_local(&self, mut local: impl FnMut(usize, &mut [f64]) -> Result<()>) -> Result<CsrMatrix<f64>> {
        let mut a = self.empty_matrix();
        let k = self.mesh.dim() + 1;
        let mut buf = vec![0.0; k * k];
        for c in 0..self.mesh.num_cells() {
            local(c, &mut buf)?;
            let ld = self.local_dofs(c);
            for i in 0..k {
                for j in 0..k {
                    a.add_to(ld[i], ld[j], buf[i * k + j]);
                }
            }
        }
        Ok(a)
    }

    pub fn stiffness(&self) -> Result<CsrMatrix<f64>> {
        self.assemble_local(|c, buf| {
            buf.copy_from_slice(&element_stiffness(&self.mesh, c)?);
            Ok(())
        })
    }

    pub fn mass(&self) -> Result<CsrMatrix<f64>> {
        self.assemble_local(|c, buf| {
            buf.copy_from_slice(&element_mass(&self.mesh, c)?);
            Ok(())
        })
    }

    /// `int coef(u_h(x)) phi_i phi_j`, where `u_h` are the P1 fields given by
    /// the dof vectors in `fields` and `coef` receives their values at each
    /// quadrature point.
    pub fn field_weighted_mass(&self, fields: &[&[f64]], coef: impl Fn(&[f64]) -> f64) -> Result<CsrMatrix<f64>> {
        let rule = QuadratureRule::nonlinear(self.mesh.dim());
        let k = self.mesh.dim() + 1;
        let mut vals = vec![0.0; fields.len()];
        self.assemble_local(|c, buf| {
            let vol = self.mesh.cell_volume(c);
            let ld = self.local_dofs(c);
            buf.iter_mut().for_each(|b| *b = 0.0);
            for (lam, &w) in rule.points.iter().zip(&rule.weights) {
                for (v, f) in vals.iter_mut().zip(fields) {
                    *v = (0..k).map(|m| lam[m] * f[ld[m]]).sum();
                }
                let cw = coef(&vals) * w * vol;
                for i in 0..k {
                    for j in 0..k {
                        buf[i * k + j] += cw * lam[i] * lam[j];
                    }
                }
            }
            Ok(())
        })
    }

    /// `int g(u_h(x)) phi_i` for P1 fields `u_h`.
    pub fn field_load(&self, fields: &[&[f64]], g: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let rule = QuadratureRule::nonlinear(self.mesh.dim());
        let k = self.mesh.dim() + 1;
        let mut out = vec![0.0; self.num_dofs()];
        let mut vals = vec![0.0; fields.len()];
        for c in 0..self.mesh.num_cells() {
            let vol = self.mesh.cell_volume(c);
            let ld = self.local_dofs(c);
            for (lam, &w) in rule.points.iter().zip(&rule.weights) {
                for (v, f) in vals.iter_mut().zip(fields) {
                    *v = (0..k).map(|m| lam[m] * f[ld[m]]).sum();
                }
                let gw = g(&vals) * w * vol;
                for i in 0..k {
                    out[ld[i]] += gw * lam[i];
                }
            }
        }
        out
    }

    /// `int g(u_h(x)) dx` for P1 fields `u_h`.
    pub fn field_integral(&self, fields: &[&[f64]], g: impl Fn(&[f64]) -> f64) -> f64 {
        let rule = QuadratureRule::nonlinear(self.mesh.dim());
        let k = self.mesh.dim() + 1;
        let mut vals = vec![0.0; fields.len()];
        let mut total = 0.0;
        for c in 0..self.mesh.num_cells() {
            let vol = self.mesh.cell_volume(c);
            let ld = self.local_dofs(c);
            for (lam, &w) in rule.points.iter().zip(&rule.weights) {
                for (v, f) in vals.iter_mut().zip(fields) {
                    *v = (0..k).map(|m| lam[m] * f[ld[m]]).sum();
                }
                total += g(&vals) * w * vol;
            }
        }
        total
    }

    /// `int f(x) phi_i` with the degree-2 load rule.
    pub fn load_vector(&self, f: &dyn Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
        let d = self.mesh.dim();
        let k = d + 1;
        let rule = QuadratureRule::load(d);
        let mut out = vec![0.0; self.num_dofs()];
        let mut x = vec![0.0; d];
        for c in 0..self.mesh.num_cells() {
            let vol = self.mesh.cell_volume(c);
            let cell = self.mesh.cell(c);
            let ld = self.local_dofs(c);
            for (lam, &w) in rule.points.iter().zip(&rule.weights) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for m in 0..k {
                    let xm = self.mesh.node(cell[m]);
                    for a in 0..d {
                        x[a] += lam[m] * xm[a];
                    }
                }
                let fx = f(&x);
                if !fx.is_finite() {
                    return Err(Error::NonFinite(format!("load evaluates to {fx} at {x:?}")));
                }
                for i in 0..k {
                    out[ld[i]] += fx * w * vol * lam[i];
                }
            }
        }
        Ok(out)
    }

    /// Load vector of a P1 function given by nodal values.
    pub fn nodal_load(&self, nodal: &[f64]) -> Result<Vec<f64>> {
        if nodal.len() != self.mesh.num_nodes() {
            return Err(Error::DimensionMismatch { expected: self.mesh.num_nodes(), got: nodal.len() });
        }
        if let Some(v) = nodal.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("nodal load contains {v}")));
        }
        let k = self.mesh.dim() + 1;
        let mut out = vec![0.0; self.num_dofs()];
        for c in 0..self.mesh.num_cells() {
            let m = element_mass(&self.mesh, c)?;
            let cell = self.mesh.cell(c);
            let ld = self.local_dofs(c);
            for i in 0..k {
                out[ld[i]] += (0..k).map(|j| m[i * k + j] * nodal[cell[j]]).sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Nodal field from a dof vector.
    pub fn field(&self, dof_values: &[f64]) -> FemField {
        FemField::new(self.mesh.clone(), self.dofs.expand(dof_values))
    }
}

#[derive(Clone)]
pub enum FaceCondition {
    /// Homogeneous Neumann; contributes nothing to the system.
    Natural,
    Dirichlet(ScalarFn),
    /// Prescribed outward flux `du/dn = g`.
    Neumann(ScalarFn),
    /// Paired with the opposite face of the same axis.
    Periodic,
}

impl std::fmt::Debug for FaceCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FaceCondition::Natural => "Natural",
            FaceCondition::Dirichlet(_) => "Dirichlet",
            FaceCondition::Neumann(_) => "Neumann",
            FaceCondition::Periodic => "Periodic",
        })
    }
}

/// Boundary condition per box face; faces not mentioned are natural.
#[derive(Debug, Clone, Default)]
pub struct BoundarySpec {
    faces: Vec<(Face, FaceCondition)>,
}

impl BoundarySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, face: Face, cond: FaceCondition) -> Self {
        self.faces.retain(|(f, _)| *f != face);
        self.faces.push((face, cond));
        self
    }

    pub fn dirichlet(self, face: Face, g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.set(face, FaceCondition::Dirichlet(Arc::new(g)))
    }

    pub fn neumann(self, face: Face, g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.set(face, FaceCondition::Neumann(Arc::new(g)))
    }

    pub fn natural(self, face: Face) -> Self {
        self.set(face, FaceCondition::Natural)
    }

    /// Marks both faces of `axis` periodic.
    pub fn periodic(self, axis: usize) -> Self {
        self.set(Face::lower(axis), FaceCondition::Periodic).set(Face::upper(axis), FaceCondition::Periodic)
    }

    pub fn condition(&self, face: Face) -> &FaceCondition {
        self.faces.iter().find(|(f, _)| *f == face).map_or(&FaceCondition::Natural, |(_, c)| c)
    }

    /// Axes whose two faces are periodic; errors if a face is periodic without its partner.
    pub fn periodic_axes(&self, dim: usize) -> Result<Vec<usize>> {
        let mut axes = Vec::new();
        for (face, cond) in &self.faces {
            if face.axis >= dim {
                return Err(Error::PeriodicPairing(format!("face on axis {} in a {dim}-d problem", face.axis)));
            }
            if matches!(cond, FaceCondition::Periodic) {
                let partner = Face { axis: face.axis, upper: !face.upper };
                if !matches!(self.condition(partner), FaceCondition::Periodic) {
                    return Err(Error::PeriodicPairing(format!("axis {} has only one periodic face", face.axis)));
                }
                if !axes.contains(&face.axis) {
                    axes.push(face.axis);
                }
            }
        }
        axes.sort_unstable();
        Ok(axes)
    }
}

/// Coefficients of the bilinear form `s * int grad u . grad v + m * int u v`.
#[derive(Debug, Clone, Copy)]
pub struct BilinearForm {
    pub stiffness: f64,
    pub mass: f64,
}

impl BilinearForm {
    pub const LAPLACE: BilinearForm = BilinearForm { stiffness: 1.0, mass: 0.0 };
}

/// Right-hand side of the variational problem: `int load * v`.
pub enum Load<'a> {
    Zero,
    Function(&'a dyn Fn(&[f64]) -> f64),
    /// P1 function given by one value per mesh node.
    Nodal(&'a [f64]),
}

/// Assembled system with Dirichlet conditions eliminated symmetrically.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub space: FemSpace,
    pub matrix: CsrMatrix<f64>,
    pub rhs: Vec<f64>,
    /// Prescribed value per dof, for Dirichlet dofs.
    pub dirichlet: Vec<Option<f64>>,
}

/// Assembles `a(u, v) = int load * v + boundary terms` on the P1 space of `mesh`.
///
/// Dirichlet rows become identity rows with the boundary value on the right
/// and the matching columns are moved to the right-hand side, so a symmetric
/// form stays symmetric. Natural faces add nothing, Neumann faces add
/// `int_face g v` and periodic faces merge paired dofs.
pub fn assemble(mesh: &Arc<Mesh>, form: BilinearForm, load: Load<'_>, bcs: &BoundarySpec) -> Result<LinearSystem> {
    let d = mesh.dim();
    let axes = bcs.periodic_axes(d)?;
    let dofs = if axes.is_empty() { DofMap::identity(mesh) } else { DofMap::periodic(mesh, &axes)? };
    let space = FemSpace::new(mesh.clone(), dofs);

    let mut matrix = space.empty_matrix();
    if form.stiffness != 0.0 {
        let k = space.stiffness()?;
        matrix = matrix.combine_same_pattern(1.0, &k, form.stiffness)?;
    }
    if form.mass != 0.0 {
        let m = space.mass()?;
        matrix = matrix.combine_same_pattern(1.0, &m, form.mass)?;
    }
    let mut rhs = match load {
        Load::Zero => vec![0.0; space.num_dofs()],
        Load::Function(f) => space.load_vector(f)?,
        Load::Nodal(v) => space.nodal_load(v)?,
    };

    for face in Face::all(d) {
        if let FaceCondition::Neumann(g) = bcs.condition(face) {
            add_neumann(&space, face, g.as_ref(), &mut rhs)?;
        }
    }

    let mut dirichlet: Vec<Option<f64>> = vec![None; space.num_dofs()];
    for face in Face::all(d) {
        if let FaceCondition::Dirichlet(g) = bcs.condition(face) {
            for node in mesh.boundary_nodes().filter(|&n| mesh.on_face(n, face)) {
                let dof = space.dofs().dof(node);
                if dirichlet[dof].is_none() {
                    let v = g(mesh.node(node));
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("Dirichlet data {v} at node {node}")));
                    }
                    dirichlet[dof] = Some(v);
                }
            }
        }
    }
    apply_dirichlet(&mut matrix, &mut rhs, &dirichlet);
    Ok(LinearSystem { space, matrix, rhs, dirichlet })
}

fn apply_dirichlet(matrix: &mut CsrMatrix<f64>, rhs: &mut [f64], dirichlet: &[Option<f64>]) {
    let n = matrix.dim();
    let offsets = matrix.row_offsets().to_vec();
    let cols = matrix.col_indices().to_vec();
    let values = matrix.values_mut();
    for i in 0..n {
        for p in offsets[i]..offsets[i + 1] {
            let j = cols[p];
            if dirichlet[i].is_some() {
                values[p] = if i == j { 1.0 } else { 0.0 };
            } else if let Some(g) = dirichlet[j] {
                rhs[i] -= values[p] * g;
                values[p] = 0.0;
            }
        }
        if let Some(g) = dirichlet[i] {
            rhs[i] = g;
        }
    }
}

/// Adds `int_face g phi_i` using vertex quadrature on each boundary facet.
fn add_neumann(space: &FemSpace, face: Face, g: &(dyn Fn(&[f64]) -> f64 + Send + Sync), rhs: &mut [f64]) -> Result<()> {
    let mesh = space.mesh();
    let d = mesh.dim();
    if d == 1 {
        let node = if face.upper { mesh.num_nodes() - 1 } else { 0 };
        rhs[space.dofs().dof(node)] += g(mesh.node(node));
        return Ok(());
    }
    for c in 0..mesh.num_cells() {
        let cell = mesh.cell(c);
        let on: Vec<usize> = cell.iter().copied().filter(|&v| mesh.on_face(v, face)).collect();
        if on.len() != d {
            continue;
        }
        let measure = if d == 2 {
            let (a, b) = (mesh.node(on[0]), mesh.node(on[1]));
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        } else {
            let (a, b, c3) = (mesh.node(on[0]), mesh.node(on[1]), mesh.node(on[2]));
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c3[0] - a[0], c3[1] - a[1], c3[2] - a[2]];
            let cr = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            0.5 * (cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]).sqrt()
        };
        for &v in &on {
            let gv = g(mesh.node(v));
            if !gv.is_finite() {
                return Err(Error::NonFinite(format!("Neumann data {gv} at node {v}")));
            }
            rhs[space.dofs().dof(v)] += measure / d as f64 * gv;
        }
    }
    Ok(())
}

/// P1 function given by its nodal values.
#[derive(Debug, Clone)]
pub struct FemField {
    mesh: Arc<Mesh>,
    coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FieldExport {
    mesh_id: String,
    coefficients: Vec<f64>,
}

impl FemField {
    pub fn new(mesh: Arc<Mesh>, coefficients: Vec<f64>) -> Self {
        assert_eq!(coefficients.len(), mesh.num_nodes(), "one coefficient per node");
        FemField { mesh, coefficients }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coefficients
    }

    pub fn value_at(&self, point: &[f64]) -> Result<f64> {
        let loc = self.mesh.locate(point)?;
        let cell = self.mesh.cell(loc.cell);
        Ok(cell.iter().zip(&loc.barycentric).map(|(&v, &l)| l * self.coefficients[v]).sum())
    }

    /// Interpolates the field at `points` (flat, `dim` coordinates each) and
    /// reports the wall-clock time spent.
    pub fn evaluate(&self, points: &[f64]) -> Result<(Vec<f64>, Duration)> {
        let d = self.mesh.dim();
        if points.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: points.len() % d });
        }
        let start = Instant::now();
        let values = points.chunks_exact(d).map(|p| self.value_at(p)).collect::<Result<Vec<_>>>()?;
        Ok((values, start.elapsed()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&FieldExport { mesh_id: self.mesh.id(), coefficients: self.coefficients.clone() })?)
    }
}

/// Solves one of the stationary Poisson problems with CG + ILU(0).
///
/// The returned duration covers assembly and the linear solve; mesh
/// construction is excluded.
pub fn solve_stationary(problem: &ProblemSpec, mesh: Arc<Mesh>) -> Result<(FemField, Duration)> {
    if problem.is_evolution() {
        return Err(Error::invalid(format!("{} is not a stationary problem", problem.id)));
    }
    if mesh.domain() != &problem.domain {
        return Err(Error::invalid("mesh box does not match the problem domain"));
    }
    let start = Instant::now();
    let bcs = problem.fem_boundary();
    // Delta u = f  <=>  int grad u . grad v = int (-f) v
    let load = |x: &[f64]| -problem.source(x);
    let system = assemble(&mesh, BilinearForm::LAPLACE, Load::Function(&load), &bcs)?;
    let ilu = ilu0_factor(&system.matrix)?;
    let sol = cg_solve(&system.matrix, &system.rhs, Some(&ilu), &KrylovOptions::stationary())?;
    let field = system.space.field(&sol.x);
    Ok((field, start.elapsed()))
}

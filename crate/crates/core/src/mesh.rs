//! Structured simplex meshes on axis-aligned boxes.
//!
//! Nodes sit on a uniform lattice and are numbered lexicographically by
//! `(z, y, x)` lattice index, so node `(i, j, k)` has index
//! `i + (n + 1) * (j + (n + 1) * k)`. Squares are split along the
//! lower-left to upper-right diagonal and cubes use the 6-tetrahedron
//! Kuhn (Freudenthal) subdivision along the main diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when deciding whether a query point lies in the box.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Axis permutations of the Kuhn subdivision, in the order tets are emitted
/// for every cube. Tet `p` follows the vertex path
/// `v0 -> v0 + e[p0] -> v0 + e[p0] + e[p1] -> v0 + 1`.
const KUHN_PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// A face of the domain box, identified by axis and side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    pub const fn lower(axis: usize) -> Self {
        Face { axis, upper: false }
    }

    pub const fn upper(axis: usize) -> Self {
        Face { axis, upper: true }
    }

    /// Bit used in the per-node face mask.
    pub fn bit(self) -> u8 {
        1 << (2 * self.axis + self.upper as usize)
    }

    /// All `2 * dim` faces of a box.
    pub fn all(dim: usize) -> impl Iterator<Item = Face> {
        (0..dim).flat_map(|axis| [Face::lower(axis), Face::upper(axis)])
    }
}

/// Axis-aligned box `[lo, hi]` in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 3 {
            return Err(Error::invalid(format!(
                "box corners must have equal dimension in 1..=3, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a < b) {
                return Err(Error::invalid(format!("degenerate box extent [{a}, {b}]")));
            }
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn unit(dim: usize) -> Self {
        DomainBox { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    /// `[a, b]^dim`.
    pub fn cube(dim: usize, a: f64, b: f64) -> Self {
        DomainBox { lo: vec![a; dim], hi: vec![b; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&x, (&a, &b))| x >= a - tol && x <= b + tol)
    }
}

/// Location of a point inside the mesh: the containing cell and the point's
/// barycentric coordinates with respect to that cell's vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLocation {
    pub cell: usize,
    pub barycentric: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    dim: usize,
    divisions: usize,
    domain: DomainBox,
    /// Flat coordinates, `dim` per node.
    coords: Vec<f64>,
    /// Flat connectivity, `dim + 1` node indices per cell.
    cells: Vec<usize>,
    /// Bitmask of box faces each node lies on (see [`Face::bit`]).
    face_mask: Vec<u8>,
}

impl Mesh {
    /// Uniform interval mesh with `n` cells on `[a, b]`.
    pub fn interval(n: usize, a: f64, b: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("interval mesh needs at least one cell"));
        }
        let domain = DomainBox::new(vec![a], vec![b])?;
        Ok(Self::structured(n, domain))
    }

    /// `n x n` squares, each split into two triangles.
    pub fn triangles(n: usize, domain: DomainBox) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("triangle mesh needs at least one square per side"));
        }
        if domain.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: domain.dim() });
        }
        let domain = DomainBox::new(domain.lo, domain.hi)?;
        Ok(Self::structured(n, domain))
    }

    /// `n x n x n` cubes, each split into six tetrahedra.
    pub fn tetrahedra(n: usize, domain: DomainBox) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("tetrahedral mesh needs at least one cube per side"));
        }
        if domain.dim() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: domain.dim() });
        }
        let domain = DomainBox::new(domain.lo, domain.hi)?;
        Ok(Self::structured(n, domain))
    }

    /// Dispatches on the box dimension.
    pub fn for_box(n: usize, domain: DomainBox) -> Result<Self> {
        match domain.dim() {
            1 => Self::interval(n, domain.lo[0], domain.hi[0]),
            2 => Self::triangles(n, domain),
            3 => Self::tetrahedra(n, domain),
            d => Err(Error::invalid(format!("unsupported dimension {d}"))),
        }
    }

    fn structured(n: usize, domain: DomainBox) -> Self {
        let dim = domain.dim();
        let np = n + 1;
        let n_nodes = np.pow(dim as u32);
        let mut coords = Vec::with_capacity(n_nodes * dim);
        let mut face_mask = vec![0u8; n_nodes];
        for (node, mask) in face_mask.iter_mut().enumerate() {
            let mut rest = node;
            for axis in 0..dim {
                let idx = rest % np;
                rest /= np;
                let (lo, hi) = (domain.lo[axis], domain.hi[axis]);
                // Endpoints are stored exactly so boundary tests are exact.
                let x = if idx == n { hi } else { lo + (hi - lo) * idx as f64 / n as f64 };
                coords.push(x);
                if idx == 0 {
                    *mask |= Face::lower(axis).bit();
                }
                if idx == n {
                    *mask |= Face::upper(axis).bit();
                }
            }
        }

        let lattice = |ijk: [usize; 3]| ijk[0] + np * (ijk[1] + np * ijk[2]);
        let cells = match dim {
            1 => (0..n).flat_map(|i| [i, i + 1]).collect(),
            2 => {
                let mut cells = Vec::with_capacity(6 * n * n);
                for j in 0..n {
                    for i in 0..n {
                        let v00 = lattice([i, j, 0]);
                        let v10 = lattice([i + 1, j, 0]);
                        let v01 = lattice([i, j + 1, 0]);
                        let v11 = lattice([i + 1, j + 1, 0]);
                        cells.extend_from_slice(&[v00, v10, v11, v00, v11, v01]);
                    }
                }
                cells
            }
            _ => {
                let mut cells = Vec::with_capacity(24 * n * n * n);
                for k in 0..n {
                    for j in 0..n {
                        for i in 0..n {
                            for perm in KUHN_PERMS {
                                let mut v = [i, j, k];
                                cells.push(lattice(v));
                                for axis in perm {
                                    v[axis] += 1;
                                    cells.push(lattice(v));
                                }
                            }
                        }
                    }
                }
                cells
            }
        };

        Mesh { dim, divisions: n, domain, coords, cells, face_mask }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of lattice intervals per axis.
    pub fn divisions(&self) -> usize {
        self.divisions
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn num_nodes(&self) -> usize {
        self.face_mask.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[c * k..(c + 1) * k]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Lattice spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        (self.domain.hi[axis] - self.domain.lo[axis]) / self.divisions as f64
    }

    /// Face bitmask of node `i`; zero for interior nodes.
    pub fn face_mask(&self, i: usize) -> u8 {
        self.face_mask[i]
    }

    pub fn on_face(&self, i: usize, face: Face) -> bool {
        self.face_mask[i] & face.bit() != 0
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.face_mask[i] != 0
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_nodes()).filter(|&i| self.face_mask[i] != 0)
    }

    /// Signed volume of a cell (length / area / volume).
    pub fn signed_volume(&self, c: usize) -> f64 {
        let cell = self.cell(c);
        let x0 = self.node(cell[0]);
        let d = self.dim;
        let mut jac = [[0.0; 3]; 3];
        for (r, &v) in cell[1..].iter().enumerate() {
            let x = self.node(v);
            for a in 0..d {
                jac[r][a] = x[a] - x0[a];
            }
        }
        match d {
            1 => jac[0][0],
            2 => 0.5 * (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]),
            _ => {
                let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                    - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                    + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
                det / 6.0
            }
        }
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        self.signed_volume(c).abs()
    }

    /// Finds the cell containing `point` and its barycentric coordinates.
    ///
    /// Uses the lattice structure directly, so the lookup is O(1).
    pub fn locate(&self, point: &[f64]) -> Result<PointLocation> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: point.len() });
        }
        if !self.domain.contains(point, DOMAIN_TOL) {
            return Err(Error::OutOfDomain { point: point.to_vec() });
        }
        let n = self.divisions;
        let mut idx = [0usize; 3];
        let mut xi = [0.0f64; 3];
        for a in 0..self.dim {
            let (lo, hi) = (self.domain.lo[a], self.domain.hi[a]);
            let s = (point[a] - lo) / (hi - lo) * n as f64;
            let i = (s.floor().max(0.0) as usize).min(n - 1);
            idx[a] = i;
            xi[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        let mut bary = [0.0; 4];
        let cell = match self.dim {
            1 => {
                bary[0] = 1.0 - xi[0];
                bary[1] = xi[0];
                idx[0]
            }
            2 => {
                let square = idx[0] + n * idx[1];
                if xi[0] >= xi[1] {
                    // (v00, v10, v11)
                    bary[0] = 1.0 - xi[0];
                    bary[1] = xi[0] - xi[1];
                    bary[2] = xi[1];
                    2 * square
                } else {
                    // (v00, v11, v01)
                    bary[0] = 1.0 - xi[1];
                    bary[1] = xi[0];
                    bary[2] = xi[1] - xi[0];
                    2 * square + 1
                }
            }
            _ => {
                let cube = idx[0] + n * (idx[1] + n * idx[2]);
                let mut order = [0usize, 1, 2];
                // Stable sort by decreasing local coordinate.
                order.sort_by(|&a, &b| xi[b].partial_cmp(&xi[a]).unwrap_or(std::cmp::Ordering::Equal));
                let p = KUHN_PERMS.iter().position(|&q| q == order).expect("permutation");
                bary[0] = 1.0 - xi[order[0]];
                bary[1] = xi[order[0]] - xi[order[1]];
                bary[2] = xi[order[1]] - xi[order[2]];
                bary[3] = xi[order[2]];
                6 * cube + p
            }
        };
        Ok(PointLocation { cell, barycentric: bary })
    }

    /// Serializes the mesh for debugging.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            dim: usize,
            nodes: Vec<&'a [f64]>,
            cells: Vec<&'a [usize]>,
            boundary: Vec<(usize, u8)>,
        }
        let dump = Dump {
            dim: self.dim,
            nodes: (0..self.num_nodes()).map(|i| self.node(i)).collect(),
            cells: (0..self.num_cells()).map(|c| self.cell(c)).collect(),
            boundary: self.boundary_nodes().map(|i| (i, self.face_mask[i])).collect(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    /// Short identifier used in exports, e.g. `tri-100`.
    pub fn id(&self) -> String {
        let kind = ["interval", "tri", "tet"][self.dim - 1];
        format!("{kind}-{}", self.divisions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn interval_two_cells() {
        let m = Mesh::interval(2, 0.0, 1.0).unwrap();
        assert_eq!(m.coords(), &[0.0, 0.5, 1.0]);
        assert_eq!(m.cell(0), &[0, 1]);
        assert_eq!(m.cell(1), &[1, 2]);
        assert_eq!(m.boundary_nodes().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn interval_counts_and_spacing() {
        let m = Mesh::interval(64, 0.0, 1.0).unwrap();
        assert_eq!((m.num_nodes(), m.num_cells()), (65, 64));

        let m = Mesh::interval(3, -5.0, 5.0).unwrap();
        assert_close(m.spacing(0), 10.0 / 3.0, 1e-15);
        let total: f64 = (0..m.num_cells()).map(|c| m.cell_volume(c)).sum();
        assert_close(total, 10.0, 1e-12);
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(Mesh::interval(0, 0.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(Mesh::interval(4, 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(Mesh::interval(4, 2.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(Mesh::triangles(0, DomainBox::unit(2)).is_err());
        assert!(Mesh::tetrahedra(0, DomainBox::unit(3)).is_err());
    }

    #[test]
    fn single_square() {
        let m = Mesh::triangles(1, DomainBox::unit(2)).unwrap();
        assert_eq!((m.num_nodes(), m.num_cells()), (4, 2));
        for c in 0..2 {
            assert_close(m.signed_volume(c), 0.5, 1e-15);
        }
    }

    #[test]
    fn triangle_family_counts() {
        let m = Mesh::triangles(100, DomainBox::unit(2)).unwrap();
        assert_eq!((m.num_nodes(), m.num_cells()), (10201, 20000));
        let area: f64 = (0..m.num_cells()).map(|c| m.cell_volume(c)).sum();
        assert_close(area, 1.0, 1e-12);
        let expected = (1.0f64 / 100.0).powi(2) / 2.0;
        assert!((0..m.num_cells()).all(|c| (m.cell_volume(c) - expected).abs() < 1e-15));
    }

    #[test]
    fn single_cube_kuhn() {
        let m = Mesh::tetrahedra(1, DomainBox::unit(3)).unwrap();
        assert_eq!((m.num_nodes(), m.num_cells()), (8, 6));
        for c in 0..6 {
            assert_close(m.cell_volume(c), 1.0 / 6.0, 1e-15);
        }
    }

    #[test]
    fn tet_family() {
        let m = Mesh::tetrahedra(16, DomainBox::unit(3)).unwrap();
        assert_eq!(m.num_nodes(), 4913);
        let m = Mesh::tetrahedra(4, DomainBox::unit(3)).unwrap();
        let vol: f64 = (0..m.num_cells()).map(|c| m.cell_volume(c)).sum();
        assert_close(vol, 1.0, 1e-12);
    }

    #[test]
    fn doubling_scales_cell_count() {
        for dim in 1..=3 {
            for n in [1, 2, 3, 5] {
                let a = Mesh::for_box(n, DomainBox::unit(dim)).unwrap();
                let b = Mesh::for_box(2 * n, DomainBox::unit(dim)).unwrap();
                assert_eq!(b.num_cells(), a.num_cells() << dim);
            }
        }
    }

    #[test]
    fn locate_examples() {
        let m = Mesh::interval(2, 0.0, 1.0).unwrap();
        let loc = m.locate(&[0.25]).unwrap();
        assert_eq!(loc.cell, 0);
        assert_close(loc.barycentric[0], 0.5, 1e-15);
        assert_close(loc.barycentric[1], 0.5, 1e-15);

        let loc = m.locate(&[0.3]).unwrap();
        assert_eq!(loc.cell, 0);
        assert_close(loc.barycentric[0], 0.4, 1e-12);
        assert_close(loc.barycentric[1], 0.6, 1e-12);

        let loc = m.locate(&[0.5]).unwrap();
        let cell = m.cell(loc.cell);
        let hit = cell.iter().position(|&v| v == 1).unwrap();
        assert_close(loc.barycentric[hit], 1.0, 1e-15);

        assert!(matches!(m.locate(&[1.5]), Err(Error::OutOfDomain { .. })));
        assert!(m.locate(&[1.0 + 1e-13]).is_ok());
    }

    #[test]
    fn locate_at_tet_vertex() {
        let m = Mesh::tetrahedra(3, DomainBox::unit(3)).unwrap();
        let target = 1 + 4 * (2 + 4 * 1);
        let loc = m.locate(m.node(target)).unwrap();
        let cell = m.cell(loc.cell);
        for (k, &v) in cell.iter().enumerate() {
            let want = if v == target { 1.0 } else { 0.0 };
            assert_close(loc.barycentric[k], want, 1e-12);
        }
    }

    #[test]
    fn boundary_tagging() {
        let m = Mesh::tetrahedra(4, DomainBox::unit(3)).unwrap();
        let np = 5;
        for corner in [0, 4, 20, 24, 100, 104, 120, 124] {
            assert!(m.is_boundary(corner));
        }
        let interior = 2 + np * (1 + np * 3);
        assert!(!m.is_boundary(interior));
        assert!(m.on_face(4, Face::upper(0)));
        assert!(!m.on_face(4, Face::upper(1)));
    }

    #[test]
    fn json_dump_has_nodes_and_cells() {
        let m = Mesh::triangles(1, DomainBox::unit(2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 4);
        assert_eq!(v["cells"].as_array().unwrap().len(), 2);
        assert_eq!(v["boundary"].as_array().unwrap().len(), 4);
    }
}

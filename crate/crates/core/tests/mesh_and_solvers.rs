use pde_arena::mesh::{DomainBox, Face, Mesh};
use pde_arena::sparse::{cg_solve, gmres_solve, ilu0_factor, CsrMatrix, KrylovOptions};
use proptest::prelude::*;

fn mesh(dim: usize, n: usize) -> Mesh {
    Mesh::for_box(n, DomainBox::unit(dim)).unwrap()
}

#[test]
fn doubling_multiplies_cells_by_power_of_two() {
    for dim in 1..=3 {
        for n in [1, 2, 3, 5] {
            assert_eq!(mesh(dim, 2 * n).num_cells(), mesh(dim, n).num_cells() << dim);
        }
    }
}

#[test]
fn cell_volumes_fill_the_box() {
    let b = DomainBox::new(vec![-1.0, 0.5, 2.0], vec![1.5, 1.0, 4.0]).unwrap();
    let m = Mesh::for_box(4, b.clone()).unwrap();
    let total: f64 = (0..m.num_cells()).map(|c| m.cell_volume(c)).sum();
    assert!((total - b.volume()).abs() < 1e-12 * b.volume());
    assert!((0..m.num_cells()).all(|c| m.signed_volume(c).abs() > 0.0));
}

#[test]
fn corners_are_tagged() {
    for dim in 1..=3 {
        let m = mesh(dim, 6);
        let n = 7usize;
        for corner in 0..(1usize << dim) {
            let mut idx = 0;
            let mut stride = 1;
            for a in 0..dim {
                idx += if corner >> a & 1 == 1 { (n - 1) * stride } else { 0 };
                stride *= n;
            }
            assert!(m.is_boundary(idx));
            assert_eq!(m.face_mask(idx).count_ones() as usize, dim);
        }
    }
}

proptest! {
    #[test]
    fn locate_reproduces_point(dim in 1usize..=3, n in 1usize..12, u in prop::array::uniform3(0.0f64..=1.0)) {
        let b = DomainBox::cube(dim, -5.0, 5.0);
        let m = Mesh::for_box(n, b).unwrap();
        let p: Vec<f64> = u[..dim].iter().map(|v| -5.0 + 10.0 * v).collect();
        let loc = m.locate(&p).unwrap();
        let verts = m.cell(loc.cell);
        let mut q = vec![0.0; dim];
        let mut wsum = 0.0;
        for (k, &v) in verts.iter().enumerate() {
            let w = loc.barycentric[k];
            prop_assert!(w >= -1e-12);
            wsum += w;
            for a in 0..dim {
                q[a] += w * m.node(v)[a];
            }
        }
        prop_assert!((wsum - 1.0).abs() < 1e-12);
        for a in 0..dim {
            prop_assert!((q[a] - p[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_lattice_nodes_untagged(dim in 1usize..=3, n in 3usize..10, seed in any::<u64>()) {
        let m = mesh(dim, n);
        // Pick interior lattice indices 1..n-1 on every axis.
        let mut idx = 0;
        let mut stride = 1;
        let mut s = seed;
        for _ in 0..dim {
            let i = 1 + (s % (n as u64 - 1)) as usize;
            s /= n as u64;
            idx += i.min(n - 1) * stride;
            stride *= n + 1;
        }
        prop_assert!(!m.is_boundary(idx));
        prop_assert!(Face::all(dim).all(|f| !m.on_face(idx, f)));
    }

    #[test]
    fn points_outside_are_rejected(x in 1.0001f64..10.0) {
        let m = mesh(2, 4);
        prop_assert!(m.locate(&[x, 0.5]).is_err());
        prop_assert!(m.locate(&[0.5, -x]).is_err());
    }
}

/// Random symmetric diagonally dominant matrix with positive diagonal (hence SPD).
fn spd(n: usize, entries: &[(usize, usize, f64)]) -> CsrMatrix<f64> {
    let mut trip = Vec::new();
    let mut rowsum = vec![0.0; n];
    for &(i, j, v) in entries {
        let (i, j) = (i % n, j % n);
        if i != j {
            trip.push((i, j, v));
            trip.push((j, i, v));
            rowsum[i] += v.abs();
            rowsum[j] += v.abs();
        }
    }
    for (i, s) in rowsum.iter().enumerate() {
        trip.push((i, i, s + 1.0));
    }
    CsrMatrix::from_triplets(n, &trip).unwrap()
}

fn poisson_1d(n: usize) -> CsrMatrix<f64> {
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 2.0));
        if i > 0 {
            t.push((i, i - 1, -1.0));
        }
        if i + 1 < n {
            t.push((i, i + 1, -1.0));
        }
    }
    CsrMatrix::from_triplets(n, &t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cg_converges_within_n_plus_five(
        n in 2usize..40,
        entries in prop::collection::vec((0usize..40, 0usize..40, -1.0f64..1.0), 0..80),
        b in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let a = spd(n, &entries);
        let b = &b[..n];
        prop_assume!(b.iter().any(|v| v.abs() > 1e-3));
        let sol = cg_solve(&a, b, None, &KrylovOptions::stationary()).unwrap();
        prop_assert!(sol.iterations <= n + 5);
        let r = a.spmv(&sol.x).unwrap();
        let res: f64 = r.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(res <= 1e-9 * bn);
    }

    #[test]
    fn full_restart_gmres_solves_nonsymmetric(
        n in 2usize..30,
        entries in prop::collection::vec((0usize..30, 0usize..30, -1.0f64..1.0), 0..60),
        skew in prop::collection::vec((0usize..30, 0usize..30, -0.5f64..0.5), 0..30),
        b in prop::collection::vec(-1.0f64..1.0, 30),
    ) {
        let sym = spd(n, &entries);
        let mut trip = Vec::new();
        for i in 0..n {
            let (cols, vals) = sym.row(i);
            for (c, v) in cols.iter().zip(vals) {
                trip.push((i, *c, *v));
            }
        }
        for &(i, j, v) in &skew {
            let (i, j) = (i % n, j % n);
            if i != j {
                trip.push((i, j, v));
                trip.push((i, i, v.abs()));
            }
        }
        let a = CsrMatrix::from_triplets(n, &trip).unwrap();
        let b = &b[..n];
        prop_assume!(b.iter().any(|v| v.abs() > 1e-3));
        let opts = KrylovOptions::stationary().with_restart(n);
        let sol = gmres_solve(&a, b, None, &opts).unwrap();
        prop_assert!(sol.relative_residual <= 1e-10);
        let ilu = ilu0_factor(&a).unwrap();
        let psol = gmres_solve(&a, b, Some(&ilu), &opts).unwrap();
        prop_assert!(psol.relative_residual <= 1e-10);
    }
}

#[test]
fn ilu_never_increases_cg_iterations_on_poisson() {
    for n in [64, 256, 1024] {
        let a = poisson_1d(n);
        let b: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin()).collect();
        let plain = cg_solve(&a, &b, None, &KrylovOptions::stationary()).unwrap();
        let ilu = ilu0_factor(&a).unwrap();
        let pre = cg_solve(&a, &b, Some(&ilu), &KrylovOptions::stationary()).unwrap();
        assert!(pre.iterations <= plain.iterations, "n={n}: {} > {}", pre.iterations, plain.iterations);
    }
}

#[test]
fn solvers_work_in_single_precision() {
    let n = 50;
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 4.0f32));
        if i > 0 {
            t.push((i, i - 1, -1.0));
        }
        if i + 1 < n {
            t.push((i, i + 1, -1.5));
        }
    }
    let a = CsrMatrix::from_triplets(n, &t).unwrap();
    let b = vec![1.0f32; n];
    let ilu = ilu0_factor(&a).unwrap();
    let sol = gmres_solve(&a, &b, Some(&ilu), &KrylovOptions::stationary().with_tol(1e-5)).unwrap();
    let r = a.spmv(&sol.x).unwrap();
    assert!(r.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-4));
}

use std::collections::BTreeSet;
use std::f64::consts::PI;

use hyperleaf_core::hypercube::{even_wavelengths, CubeKind, HyperCube, Mask};
use hyperleaf_core::patches::{anchor_count, extract_patches, split, split_counts, Patch, PatchOrigin, PatchSet};
use hyperleaf_core::spectral::{local_laplacian, sam_angle};
use hyperleaf_core::Rating;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn spectrum(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter("nonzero", |v| v.iter().any(|&x| x > 1e-3))
}

fn cube_3x3(values: &[f64], bands: usize) -> HyperCube {
    let data = values.iter().map(|&v| v as f32).collect();
    HyperCube::new(3, 3, even_wavelengths(bands, 690.0, 840.0), data, CubeKind::Reflectance).unwrap()
}

proptest! {
    #[test]
    fn sam_self_angle_is_zero(x in spectrum(11)) {
        prop_assert_eq!(sam_angle(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn sam_symmetric_and_bounded(x in spectrum(11), y in spectrum(11)) {
        let a = sam_angle(&x, &y).unwrap();
        prop_assert_eq!(a, sam_angle(&y, &x).unwrap());
        // nonnegative spectra never point more than a right angle apart
        prop_assert!((0.0..=PI / 2.0 + 1e-12).contains(&a));
    }

    #[test]
    fn sam_scale_invariant(x in spectrum(11), y in spectrum(11), s in 1e-3f64..1e3) {
        let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
        prop_assert!((sam_angle(&scaled, &y).unwrap() - sam_angle(&x, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sam_matches_arccos_away_from_the_poles(x in spectrum(6), y in spectrum(6)) {
        let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        let c = dot / (nx * ny);
        prop_assume!(c < 0.999);
        prop_assert!((sam_angle(&x, &y).unwrap() - c.acos()).abs() < 1e-9);
    }

    #[test]
    fn laplacian_rows_sum_to_zero_and_form_matches(
        values in prop::collection::vec(0.01f64..1.0, 9 * 5),
        v in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let cube = cube_3x3(&values, 5);
        let g = local_laplacian(&cube, &Mask::filled(3, 3, true), 1, 1).unwrap();
        let m = g.size();
        prop_assert_eq!(m, 9);
        for i in 0..m {
            prop_assert!(g.l[i * m..(i + 1) * m].iter().sum::<f64>().abs() < 1e-6);
        }
        let mut half = 0.0;
        for i in 0..m {
            for j in 0..m {
                half += 0.5 * g.w[i * m + j] * (v[i] - v[j]).powi(2);
            }
        }
        prop_assert!((g.quadratic_form(&v) - half).abs() < 1e-6);
        prop_assert!(g.quadratic_form(&v) >= -1e-6);
    }

    #[test]
    fn laplacian_spectrum_is_nonnegative(values in prop::collection::vec(0.01f64..1.0, 9 * 4)) {
        let cube = cube_3x3(&values, 4);
        let g = local_laplacian(&cube, &Mask::filled(3, 3, true), 1, 1).unwrap();
        let l = DMatrix::from_row_slice(9, 9, &g.l);
        let eig = l.symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&e| e > -1e-9));
        // constant vector spans the null space
        prop_assert!(eig.eigenvalues.iter().any(|&e| e.abs() < 1e-9));
    }

    #[test]
    fn patch_count_closed_form(h in 1usize..40, w in 1usize..40, n in 1usize..20, stride in 1usize..20) {
        prop_assume!(n <= h.min(w));
        let cube = HyperCube::constant(h, w, even_wavelengths(2, 700.0, 800.0), CubeKind::Reflectance, 0.5).unwrap();
        let set = extract_patches(&cube, &Mask::filled(h, w, true), Rating::from_index(0), 0, n, stride).unwrap();
        prop_assert_eq!(set.len(), ((h - n) / stride + 1) * ((w - n) / stride + 1));
        prop_assert_eq!(set.len(), anchor_count(h, n, stride) * anchor_count(w, n, stride));
    }

    #[test]
    fn split_counts_are_floor_or_ceiling(k in 0usize..500, a in 0u32..10, b in 0u32..10, c in 1u32..10) {
        let ratios = [a, b, c];
        let counts = split_counts(k, ratios);
        prop_assert_eq!(counts.iter().sum::<usize>(), k);
        let total = (a + b + c) as f64;
        for i in 0..3 {
            let exact = k as f64 * ratios[i] as f64 / total;
            prop_assert!((counts[i] as f64 - exact).abs() < 1.0);
        }
    }

    #[test]
    fn split_partitions_and_repeats(per_class in 1usize..30, seed in any::<u64>()) {
        let set = labelled_set(per_class);
        let a = split(&set, [6, 2, 2], seed, true).unwrap();
        prop_assert_eq!(&a, &split(&set, [6, 2, 2], seed, true).unwrap());
        let mut seen = BTreeSet::new();
        for part in [&a.train, &a.validation, &a.test] {
            for p in &part.patches {
                prop_assert!(seen.insert(p.origin.col));
            }
        }
        prop_assert_eq!(seen.len(), set.len());
        let want = split_counts(per_class, [6, 2, 2]);
        for r in Rating::all() {
            let got = [&a.train, &a.validation, &a.test].map(|s| s.class_counts().get(&r).copied().unwrap_or(0));
            prop_assert_eq!(got, want);
        }
    }
}

/// `per_class` single-pixel patches per class; the column doubles as a
/// unique id.
fn labelled_set(per_class: usize) -> PatchSet {
    let mut set = PatchSet::empty(1, 1);
    for (k, r) in Rating::all().enumerate() {
        for i in 0..per_class {
            let id = (k * per_class + i) as u32;
            set.patches.push(Patch {
                n: 1,
                bands: 1,
                data: vec![id as f32],
                label: r,
                origin: PatchOrigin { scene_id: k as u32, row: 0, col: id },
                augmented: false,
            });
        }
    }
    set
}

#[test]
fn known_angles() {
    assert!((sam_angle(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - PI / 4.0).abs() < 1e-12);
    assert!((sam_angle(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - PI / 2.0).abs() < 1e-12);
}

//! Lloyd's k-means over whole pixel spectra.
//!
//! Initialization picks one seeded pixel, then repeatedly the pixel farthest
//! (squared Euclidean) from every centroid chosen so far. Assignment runs in
//! parallel; centroid sums are accumulated sequentially in pixel order in
//! `f64`, so labels do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypercube::HyperCube;
use crate::rng::{stage_rng, uniform_int};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

#[inline]
fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(&a, &b)| (a as f64 - b).powi(2)).sum()
}

fn nearest(x: &[f32], centroids: &[Vec<f64>]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j as u32, d);
        }
    }
    best
}

/// First index holding the maximum value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn kmeans_spectra(cube: &HyperCube, k: usize, iters: usize, seed: u64) -> Result<KMeansResult> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k-means needs k >= 2, got {k}")));
    }
    let n = cube.pixel_count();
    if k > n {
        return Err(Error::TooManyClusters { k, pixels: n });
    }
    let to_f64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();

    let mut rng = stage_rng(seed);
    let first = uniform_int(&mut rng, 0, n as i64 - 1) as usize;
    let mut centroids = vec![to_f64(cube.spectrum_at(first))];
    let mut min_dist: Vec<f64> = (0..n).into_par_iter().map(|p| sq_dist(cube.spectrum_at(p), &centroids[0])).collect();
    while centroids.len() < k {
        let next = argmax(&min_dist);
        let c = to_f64(cube.spectrum_at(next));
        min_dist.par_iter_mut().enumerate().for_each(|(p, d)| *d = d.min(sq_dist(cube.spectrum_at(p), &c)));
        centroids.push(c);
    }

    let bands = cube.bands();
    let mut labels = vec![u32::MAX; n];
    let mut iterations = 0;
    for _ in 0..iters {
        iterations += 1;
        let assigned: Vec<(u32, f64)> =
            (0..n).into_par_iter().map(|p| nearest(cube.spectrum_at(p), &centroids)).collect();
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        for (l, a) in labels.iter_mut().zip(&assigned) {
            *l = a.0;
        }

        let mut sums = vec![vec![0.0f64; bands]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in labels.iter().enumerate() {
            counts[l as usize] += 1;
            for (s, &v) in sums[l as usize].iter_mut().zip(cube.spectrum_at(p)) {
                *s += v as f64;
            }
        }
        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        let mut reseeded = false;
        for j in 0..k {
            if counts[j] == 0 {
                let far = argmax(&dist);
                centroids[j] = to_f64(cube.spectrum_at(far));
                dist[far] = f64::NEG_INFINITY;
                reseeded = true;
            } else {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
        if !changed && !reseeded {
            break;
        }
    }
    Ok(KMeansResult { labels, centroids, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{even_wavelengths, CubeKind};

    fn two_populations() -> HyperCube {
        HyperCube::from_fn(10, 12, even_wavelengths(5, 690.0, 840.0), CubeKind::RawDn, |r, c, b| {
            if (r * 7 + c * 3) % 5 < 2 {
                0.9
            } else {
                0.1 + 0.01 * b as f32
            }
        })
        .unwrap()
    }

    #[test]
    fn separable_populations_are_pure() {
        let cube = two_populations();
        let res = kmeans_spectra(&cube, 2, 20, 5).unwrap();
        let hi = |p: usize| cube.spectrum_at(p)[0] == 0.9;
        let label_hi = res.labels[(0..cube.pixel_count()).find(|&p| hi(p)).unwrap()];
        for p in 0..cube.pixel_count() {
            assert_eq!(res.labels[p] == label_hi, hi(p));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cube = two_populations();
        let a = kmeans_spectra(&cube, 3, 20, 9).unwrap();
        let b = kmeans_spectra(&cube, 3, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let cube = HyperCube::from_fn(30, 30, even_wavelengths(4, 1.0, 4.0), CubeKind::RawDn, |r, c, b| {
            ((r * 31 + c * 17 + b * 7) % 23) as f32 / 23.0
        })
        .unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| kmeans_spectra(&cube, 4, 30, 1).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn k_bounds() {
        let cube = HyperCube::constant(1, 1, vec![700.0], CubeKind::RawDn, 1.0).unwrap();
        assert!(matches!(kmeans_spectra(&cube, 2, 5, 0), Err(Error::TooManyClusters { k: 2, pixels: 1 })));
        assert!(matches!(kmeans_spectra(&cube, 1, 5, 0), Err(Error::InvalidParameter(_))));
    }
}

//! Two-sample distances between point clouds.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub const DEFAULT_BANDWIDTHS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];
pub const DEFAULT_PROJECTIONS: usize = 128;

fn check_clouds(x: &ArrayView2<f64>, y: &ArrayView2<f64>, min_rows: usize) -> Result<()> {
    if x.nrows() < min_rows || y.nrows() < min_rows {
        return Err(Error::InvalidArgument(format!(
            "two-sample metric needs at least {min_rows} points per set, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::shape("two-sample metric dimension", x.ncols(), y.ncols()));
    }
    Ok(())
}

fn mean_kernel(a: &ArrayView2<f64>, b: &ArrayView2<f64>, inv_two_bw2: &[f64]) -> f64 {
    let mut total = 0.0;
    for u in a.rows() {
        let mut row_sum = 0.0;
        for v in b.rows() {
            let d2: f64 = u.iter().zip(v.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            row_sum += inv_two_bw2.iter().map(|c| (-d2 * c).exp()).sum::<f64>();
        }
        total += row_sum;
    }
    total / (a.nrows() * b.nrows()) as f64
}

/// Biased (V-statistic) squared MMD with a sum of Gaussian kernels, clipped at zero.
pub fn mmd_rbf(x: ArrayView2<f64>, y: ArrayView2<f64>, bandwidths: &[f64]) -> Result<f64> {
    check_clouds(&x, &y, 2)?;
    if bandwidths.is_empty() || bandwidths.iter().any(|b| *b <= 0.0 || !b.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidths must be positive, got {bandwidths:?}")));
    }
    let coeffs: Vec<f64> = bandwidths.iter().map(|b| 1.0 / (2.0 * b * b)).collect();
    // Cross-term summation order follows a canonical ordering of the pair so
    // that mmd(x, y) and mmd(y, x) agree bit for bit.
    let (x, y) = if lexicographic_less(&y, &x) { (y, x) } else { (x, y) };
    let xx = mean_kernel(&x, &x, &coeffs);
    let yy = mean_kernel(&y, &y, &coeffs);
    let xy = mean_kernel(&x, &y, &coeffs);
    Ok((xx + yy - 2.0 * xy).max(0.0))
}

fn lexicographic_less(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> bool {
    match a.nrows().cmp(&b.nrows()) {
        std::cmp::Ordering::Equal => {}
        other => return other.is_lt(),
    }
    for (p, q) in a.iter().zip(b.iter()) {
        match p.total_cmp(q) {
            std::cmp::Ordering::Equal => continue,
            other => return other.is_lt(),
        }
    }
    false
}

/// Random unit directions for slicing, drawn from the projection stream of `seed`.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, Stream::Projections);
    let mut dirs = Array2::zeros((n, dim));
    for mut row in dirs.rows_mut() {
        loop {
            row.mapv_inplace(|_: f64| StandardNormal.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    dirs
}

fn sorted_projection(cloud: &ArrayView2<f64>, dir: ArrayView1<f64>) -> Vec<f64> {
    let mut p: Vec<f64> = cloud.rows().into_iter().map(|r| r.dot(&dir)).collect();
    p.sort_by(f64::total_cmp);
    p
}

/// Mean over the given directions of the 1-D 2-Wasserstein distance between
/// the projected clouds. Both clouds must have the same number of points.
pub fn sliced_wasserstein_with_directions(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    directions: ArrayView2<f64>,
) -> Result<f64> {
    check_clouds(&x, &y, 1)?;
    if x.nrows() != y.nrows() {
        return Err(Error::shape("sliced_wasserstein sample counts", x.nrows(), y.nrows()));
    }
    if directions.nrows() == 0 || directions.ncols() != x.ncols() {
        return Err(Error::shape("sliced_wasserstein directions", x.ncols(), directions.ncols()));
    }
    let n = x.nrows() as f64;
    let total: f64 = directions
        .rows()
        .into_iter()
        .map(|dir| {
            let px = sorted_projection(&x, dir);
            let py = sorted_projection(&y, dir);
            (px.iter().zip(&py).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
        })
        .sum();
    Ok(total / directions.nrows() as f64)
}

/// Sliced 2-Wasserstein distance over `n_projections` seeded random directions.
///
/// The larger cloud is subsampled (seeded, without replacement) to the size of
/// the smaller one.
pub fn sliced_wasserstein(x: ArrayView2<f64>, y: ArrayView2<f64>, n_projections: usize, seed: u64) -> Result<f64> {
    check_clouds(&x, &y, 1)?;
    if n_projections == 0 {
        return Err(Error::InvalidArgument("n_projections must be at least 1".into()));
    }
    let dirs = random_directions(x.ncols(), n_projections, seed);
    let m = x.nrows().min(y.nrows());
    let shrink = |cloud: ArrayView2<f64>| -> Array2<f64> {
        if cloud.nrows() == m {
            return cloud.to_owned();
        }
        let mut rng = stream(seed, Stream::Reference);
        let mut picked = index::sample(&mut rng, cloud.nrows(), m).into_vec();
        picked.sort_unstable();
        cloud.select(ndarray::Axis(0), &picked)
    };
    let (xs, ys) = (shrink(x), shrink(y));
    sliced_wasserstein_with_directions(xs.view(), ys.view(), dirs.view())
}

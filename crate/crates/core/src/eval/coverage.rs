use ndarray::ArrayView2;

use super::Gmm8Spec;

/// Samples farther than this many component std from every mean are low quality.
pub const QUALITY_RADIUS_STDS: f64 = 4.0;
/// Share of the quality samples a mode needs to count as covered.
pub const MODE_SHARE: f64 = 0.02;

/// `(modes covered, fraction of high-quality samples)` for a gmm8 target.
pub fn mode_coverage(samples: ArrayView2<f64>, spec: &Gmm8Spec) -> (usize, f64) {
    if samples.nrows() == 0 {
        return (0, 0.0);
    }
    let radius = QUALITY_RADIUS_STDS * spec.component_std;
    let mut per_mode = [0usize; Gmm8Spec::COMPONENTS];
    let mut quality = 0usize;
    for row in samples.rows() {
        let (k, dist) = spec.nearest([row[0], row[1]]);
        if dist <= radius {
            per_mode[k] += 1;
            quality += 1;
        }
    }
    let covered = if quality == 0 {
        0
    } else {
        per_mode
            .iter()
            .filter(|&&c| c as f64 >= MODE_SHARE * quality as f64)
            .count()
    };
    (covered, quality as f64 / samples.nrows() as f64)
}

//! The four distillation distances between one teacher and one student batch.

use ndarray::Array2;
use o2mkd::distill::{kd_loss, KdHead, KdMethod};
use o2mkd::numerics::{Architecture, DenoiserNet};
use o2mkd::rng::{stream, Stream};
use rand_distr::{Distribution, StandardNormal};

fn main() -> o2mkd::Result<()> {
    let teacher = DenoiserNet::new(Architecture::teacher(), &mut stream(0, Stream::Init))?;
    let student = DenoiserNet::new(Architecture::student(), &mut stream(1, Stream::Init))?;
    let mut rng = stream(0, Stream::Noise);
    let z = Array2::from_shape_fn((64, 2), |_| StandardNormal.sample(&mut rng));
    let t: Vec<usize> = (0..64).map(|i| i * 15).collect();

    let (t_eps, t_feat) = teacher.predict_with_feature(z.view(), &t, 1000)?;
    let (s_eps, s_feat) = student.predict_with_feature(z.view(), &t, 1000)?;
    for method in KdMethod::ALL_ACTIVE {
        let head = KdHead::new(method, s_feat.ncols(), t_feat.ncols(), &mut stream(0, Stream::Projector));
        let out = kd_loss(&head, t_eps.view(), t_feat.view(), s_eps.view(), s_feat.view())?;
        println!("{:<12} {:.6}", method.as_str(), out.loss);
    }
    Ok(())
}

//! Students with the teacher's architecture and weights, each refined on its
//! own timestep range.
//!
//! `cargo run --release --example self_distill -- [teacher iterations] [extra iterations]`

use o2mkd::ensemble::{evaluate_model, self_distill_mode, train_o2mkd, train_teacher, TrainConfig};

fn main() -> o2mkd::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("iteration count"));
    let teacher_iterations = args.next().unwrap_or(8000);
    let extra = args.next().unwrap_or(2000);

    let cfg = TrainConfig { iterations: teacher_iterations, ema_decay: 0.99, ..TrainConfig::default() };
    let (teacher, _) = train_teacher(&cfg)?;
    let sd = TrainConfig { iterations: extra, ..self_distill_mode(&cfg) };
    let (group, report) = train_o2mkd(&teacher, &sd)?;

    let first = report.loss_rows.iter().find(|r| r.student == 1).expect("rows");
    println!("student 1 at step 0: diffusion {:.4}, kd {:.2e}", first.diffusion_loss, first.kd_loss);
    println!("teacher MMD^2 {:.5}", evaluate_model(&teacher, &cfg)?.mmd);
    println!("group   MMD^2 {:.5}", evaluate_model(&group, &sd)?.mmd);
    Ok(())
}

//! Collapse a trained group into one network by weight averaging.
//!
//! `cargo run --release --example merge_students -- [iterations]`

use o2mkd::ensemble::{
    evaluate_model, merge_students, train_o2mkd, train_teacher, uniform_weights, StudentInit, TrainConfig,
};

fn main() -> o2mkd::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse().expect("iterations")).unwrap_or(3000);
    let cfg = TrainConfig { iterations, student_init: StudentInit::Pruned, ema_decay: 0.99, ..TrainConfig::default() };
    let (teacher, _) = train_teacher(&TrainConfig { iterations: 8000, ..cfg.clone() })?;
    let (group, _) = train_o2mkd(&teacher, &cfg)?;

    let merged = merge_students(&group, &uniform_weights(group.len()))?;
    let routed = evaluate_model(&group, &cfg)?;
    let single = evaluate_model(&merged, &cfg)?;
    println!(
        "routed group: {} params, MMD^2 {:.5}",
        group.students().iter().map(|s| s.count_params()).sum::<usize>(),
        routed.mmd
    );
    println!("merged net:   {} params, MMD^2 {:.5}", merged.count_params(), single.mmd);

    // A one-hot merge is just a copy of that student.
    let mut one_hot = vec![0.0; group.len()];
    one_hot[0] = 1.0;
    assert_eq!(merge_students(&group, &one_hot)?, group.students()[0]);
    Ok(())
}

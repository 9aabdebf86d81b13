use std::time::Instant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GroupMetadata, Partition, StudentGroup, StudentInit, TrainConfig, TrainMode};
use crate::diffusion::{sample, Denoiser, NoiseSchedule, SampleConfig};
use crate::distill::{o2mkd_student_loss, sample_timesteps, Branch, KdHead, KdMethod, LossSpec, Projector};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport, ToyDataset};
use crate::numerics::{adam_step, parameter_checksum, AdamState, DenoiserNet};
use crate::rng::{stream, Rng, Stream};

/// One optimizer step of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    /// 1-based student index; 1 for single-network runs.
    pub student: usize,
    pub diffusion_loss: f64,
    pub kd_loss: f64,
    pub total: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetInfo {
    pub role: String,
    pub params: usize,
    pub macs: usize,
}

/// Everything needed to interpret and re-plot a run.
///
/// Loss rows are kept out of the JSON form; they travel as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: TrainMode,
    pub config: TrainConfig,
    pub config_hash: String,
    pub partition: Option<Partition>,
    pub teacher_checksum: Option<String>,
    /// Per student, the share of iterations that drew from the student's own range.
    pub branch_fractions: Vec<f64>,
    pub nets: Vec<NetInfo>,
    pub metrics: Option<MetricReport>,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub loss_rows: Vec<LossRow>,
}

impl RunReport {
    /// Final `(diffusion, kd)` losses of `student`, EMA-smoothed with `decay`.
    pub fn smoothed_final_loss(&self, student: usize, decay: f64) -> Option<(f64, f64)> {
        let mut ema: Option<(f64, f64)> = None;
        for row in self.loss_rows.iter().filter(|r| r.student == student) {
            ema = Some(match ema {
                None => (row.diffusion_loss, row.kd_loss),
                Some((d, k)) => (
                    decay * d + (1.0 - decay) * row.diffusion_loss,
                    decay * k + (1.0 - decay) * row.kd_loss,
                ),
            });
        }
        ema
    }
}

fn standard_normal(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

struct Learner {
    student: usize,
    net: DenoiserNet,
    ema: DenoiserNet,
    adam: AdamState,
    head: KdHead,
    projector_adam: Option<AdamState>,
}

/// Round-robin training of one network per listed (1-based) partition range.
///
/// Every iteration draws one data batch shared by all learners; each learner
/// then draws its own branch, timesteps and noise, in list order.
fn train_round_robin(
    cfg: &TrainConfig,
    teacher: Option<&DenoiserNet>,
    init: &DenoiserNet,
    partition: &Partition,
    members: &[usize],
) -> Result<(Vec<DenoiserNet>, Vec<LossRow>)> {
    let sched = NoiseSchedule::new(cfg.schedule, cfg.total_steps)?;
    let dataset = ToyDataset::new(cfg.dataset);
    let method = if teacher.is_some() { cfg.kd_method } else { KdMethod::None };
    let teacher_width = teacher.map(|t| t.architecture().feature_width()).unwrap_or(0);

    let mut projector_rng = stream(cfg.seed, Stream::Projector);
    let head = KdHead::new(method, init.architecture().feature_width(), teacher_width, &mut projector_rng);
    let mut learners: Vec<Learner> = members
        .iter()
        .map(|&student| Learner {
            student,
            net: init.clone(),
            ema: init.clone(),
            adam: AdamState::new(init),
            projector_adam: head.projector.as_ref().map(AdamState::new),
            head: head.clone(),
        })
        .collect();

    let mut data_rng = stream(cfg.seed, Stream::Data);
    let mut time_rng = stream(cfg.seed, Stream::Timesteps);
    let mut noise_rng = stream(cfg.seed, Stream::Noise);
    let dim = init.architecture().input_dim;
    let mut rows = Vec::with_capacity(cfg.iterations * learners.len());

    for iteration in 0..cfg.iterations {
        let x0 = dataset.sample(cfg.batch_size, &mut data_rng);
        for learner in learners.iter_mut() {
            let student = learner.student;
            let draw = sample_timesteps(&mut time_rng, cfg.batch_size, student, partition, cfg.p)?;
            let noise = standard_normal(cfg.batch_size, dim, &mut noise_rng);
            let spec = LossSpec {
                sched: &sched,
                head: &learner.head,
                lambda_kd: cfg.lambda_kd,
                weighting: cfg.weighting,
            };
            let at_iteration = |e: Error| match e {
                Error::NonFinite { context, .. } => Error::NonFinite {
                    context: format!("student {student}: {context}"),
                    iteration: Some(iteration),
                },
                other => other,
            };
            let (terms, grads) =
                o2mkd_student_loss(spec, teacher, &learner.net, x0.view(), &draw, noise.view()).map_err(at_iteration)?;
            adam_step(&mut learner.net, &grads.net, &mut learner.adam, &cfg.adam).map_err(at_iteration)?;
            if let (Some(p), Some(state), Some(d)) =
                (learner.head.projector.as_mut(), learner.projector_adam.as_mut(), grads.projector)
            {
                adam_step(p, &Projector { weight: d }, state, &cfg.adam).map_err(at_iteration)?;
            }
            learner.ema.ema_update(&learner.net, cfg.ema_decay)?;
            rows.push(LossRow {
                iteration,
                student,
                diffusion_loss: terms.diffusion_loss,
                kd_loss: terms.kd_loss,
                total: terms.total,
                branch: terms.branch,
            });
        }
    }
    Ok((learners.into_iter().map(|l| l.ema).collect(), rows))
}

fn branch_fractions(rows: &[LossRow], members: &[usize]) -> Vec<f64> {
    members
        .iter()
        .map(|&i| {
            let mine: Vec<_> = rows.iter().filter(|r| r.student == i).collect();
            if mine.is_empty() {
                0.0
            } else {
                mine.iter().filter(|r| r.branch == Branch::Range).count() as f64 / mine.len() as f64
            }
        })
        .collect()
}

fn net_info(role: impl Into<String>, net: &DenoiserNet) -> NetInfo {
    NetInfo {
        role: role.into(),
        params: net.count_params(),
        macs: net.count_macs(),
    }
}

/// Train a teacher from scratch; returns its EMA weights.
pub fn train_teacher(cfg: &TrainConfig) -> Result<(DenoiserNet, RunReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let init = DenoiserNet::new(cfg.teacher_architecture(), &mut stream(cfg.seed, Stream::Init))?;
    let partition = Partition::uniform(1, cfg.total_steps)?;
    let (mut nets, loss_rows) = train_round_robin(cfg, None, &init, &partition, &[1])?;
    let teacher = nets.remove(0);
    let report = RunReport {
        mode: TrainMode::Teacher,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        partition: None,
        teacher_checksum: Some(parameter_checksum(&teacher)),
        branch_fractions: branch_fractions(&loss_rows, &[1]),
        nets: vec![net_info("teacher", &teacher)],
        metrics: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        loss_rows,
    };
    Ok((teacher, report))
}

fn train_students(
    teacher: &DenoiserNet,
    cfg: &TrainConfig,
    partition: &Partition,
    members: &[usize],
    mode: TrainMode,
) -> Result<(Vec<DenoiserNet>, RunReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let expected = cfg.teacher_architecture();
    if teacher.architecture() != &expected {
        return Err(Error::ArchitectureMismatch(format!(
            "teacher is {:?}, configuration expects {:?}",
            teacher.architecture().hidden_dims,
            expected.hidden_dims
        )));
    }
    let init = match (cfg.self_distill, cfg.student_init) {
        (true, _) => teacher.clone(),
        (false, StudentInit::Pruned) => teacher.prune_to(cfg.student_architecture())?,
        (false, StudentInit::Fresh) => {
            DenoiserNet::new(cfg.student_architecture(), &mut stream(cfg.seed, Stream::Init))?
        }
    };
    let (students, loss_rows) = train_round_robin(cfg, Some(teacher), &init, partition, members)?;
    let mut nets = vec![net_info("teacher", teacher)];
    nets.extend(members.iter().zip(&students).map(|(i, s)| net_info(format!("student_{i}"), s)));
    let report = RunReport {
        mode,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        partition: Some(partition.clone()),
        teacher_checksum: Some(parameter_checksum(teacher)),
        branch_fractions: branch_fractions(&loss_rows, members),
        nets,
        metrics: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        loss_rows,
    };
    Ok((students, report))
}

fn into_group(students: Vec<DenoiserNet>, partition: Partition, report: &RunReport) -> Result<StudentGroup> {
    StudentGroup::new(
        students,
        partition,
        GroupMetadata {
            mode: report.mode,
            config_hash: report.config_hash.clone(),
            seed: report.config.seed,
            teacher_checksum: report.teacher_checksum.clone(),
        },
    )
}

/// One student distilled over all timesteps. `n_students` and `partition` in
/// the configuration are ignored; with `lambda_kd = 0` or method `none` this
/// is the student trained without distillation.
pub fn train_o2okd(teacher: &DenoiserNet, cfg: &TrainConfig) -> Result<(DenoiserNet, RunReport)> {
    let partition = Partition::uniform(1, cfg.total_steps)?;
    let (mut students, report) = train_students(teacher, cfg, &partition, &[1], TrainMode::O2okd)?;
    Ok((students.remove(0), report))
}

/// `cfg.n_students` students, each mostly distilled on its own timestep range.
pub fn train_o2mkd(teacher: &DenoiserNet, cfg: &TrainConfig) -> Result<(StudentGroup, RunReport)> {
    let partition = cfg.make_partition()?;
    let members: Vec<usize> = (1..=partition.n_students()).collect();
    let (students, report) = train_students(teacher, cfg, &partition, &members, TrainMode::O2mkd)?;
    let group = into_group(students, partition, &report)?;
    Ok((group, report))
}

/// Only student `student` of the `cfg` partition, trained exactly as inside
/// a group but without its siblings.
pub fn train_range_student(teacher: &DenoiserNet, cfg: &TrainConfig, student: usize) -> Result<(DenoiserNet, RunReport)> {
    let partition = cfg.make_partition()?;
    partition.range(student)?;
    let (mut students, report) = train_students(teacher, cfg, &partition, &[student], TrainMode::O2mkd)?;
    Ok((students.remove(0), report))
}

/// Sample `model` and score it against the dataset, per `cfg.eval`.
pub fn evaluate_model<D: Denoiser + ?Sized>(model: &D, cfg: &TrainConfig) -> Result<MetricReport> {
    let sched = NoiseSchedule::new(cfg.schedule, cfg.total_steps)?;
    let sample_cfg = SampleConfig {
        sampler: cfg.eval.sampler,
        n_steps: cfg.eval.steps,
        n_samples: cfg.eval.n_samples,
        seed: cfg.eval.sample_seed,
        keep_trajectory: false,
    };
    let out = sample(model, &sched, &sample_cfg)?;
    evaluate(
        out.samples.view(),
        &ToyDataset::new(cfg.dataset),
        cfg.eval.n_reference,
        cfg.eval.reference_seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::self_distill_mode;
    use crate::numerics::Parameters;

    fn tiny() -> TrainConfig {
        TrainConfig {
            total_steps: 40,
            time_embed_dim: 8,
            teacher_hidden: vec![16, 16, 16],
            student_hidden: vec![8, 8, 8],
            batch_size: 16,
            iterations: 12,
            n_students: 4,
            eval: crate::ensemble::EvalConfig {
                steps: 10,
                n_samples: 64,
                n_reference: 64,
                ..Default::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_return_the_init() {
        let cfg = TrainConfig { iterations: 0, ..tiny() };
        let (teacher, report) = train_teacher(&cfg).unwrap();
        let init = DenoiserNet::new(cfg.teacher_architecture(), &mut stream(cfg.seed, Stream::Init)).unwrap();
        assert_eq!(teacher, init);
        assert!(report.loss_rows.is_empty());
    }

    #[test]
    fn teacher_training_is_deterministic_and_moves() {
        let cfg = tiny();
        let (a, ra) = train_teacher(&cfg).unwrap();
        let (b, rb) = train_teacher(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.loss_rows, rb.loss_rows);
        assert_eq!(ra.loss_rows.len(), cfg.iterations);
        assert!(ra.loss_rows.iter().all(|r| r.kd_loss == 0.0));
        let init = DenoiserNet::new(cfg.teacher_architecture(), &mut stream(cfg.seed, Stream::Init)).unwrap();
        assert_ne!(a, init);
    }

    #[test]
    fn single_student_o2mkd_equals_o2okd() {
        let cfg = tiny();
        let (teacher, _) = train_teacher(&cfg).unwrap();
        let one = TrainConfig { n_students: 1, ..cfg.clone() };
        let (g, rg) = train_o2mkd(&teacher, &one).unwrap();
        let (s, rs) = train_o2okd(&teacher, &cfg).unwrap();
        assert_eq!(g.students()[0], s);
        assert_eq!(rg.loss_rows, rs.loss_rows);
    }

    #[test]
    fn teacher_is_never_modified() {
        let cfg = tiny();
        let (teacher, _) = train_teacher(&cfg).unwrap();
        let before: Vec<Vec<f64>> = teacher.tensors().iter().map(|t| t.to_vec()).collect();
        for method in KdMethod::ALL_ACTIVE {
            let c = TrainConfig { kd_method: method, ..cfg.clone() };
            train_o2mkd(&teacher, &c).unwrap();
        }
        let after: Vec<Vec<f64>> = teacher.tensors().iter().map(|t| t.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn self_distilled_students_start_at_the_teacher() {
        let cfg = tiny();
        let (teacher, teacher_report) = train_teacher(&cfg).unwrap();
        let sd = TrainConfig { iterations: 1, ..self_distill_mode(&cfg) };
        let (_, report) = train_o2mkd(&teacher, &sd).unwrap();
        assert!(report.loss_rows.iter().all(|r| r.kd_loss == 0.0));
        assert_eq!(report.nets[1].params, teacher_report.nets[0].params);
    }

    #[test]
    fn pruned_students_start_from_the_teacher() {
        let cfg = tiny();
        let (teacher, _) = train_teacher(&cfg).unwrap();
        let pruned = TrainConfig { iterations: 0, student_init: StudentInit::Pruned, ..cfg };
        let (group, _) = train_o2mkd(&teacher, &pruned).unwrap();
        let expected = teacher.prune_to(pruned.student_architecture()).unwrap();
        assert!(group.students().iter().all(|s| *s == expected));
    }

    #[test]
    fn range_student_trains_alone() {
        let cfg = tiny();
        let (teacher, _) = train_teacher(&cfg).unwrap();
        let (_, report) = train_range_student(&teacher, &TrainConfig { p: 1.0, ..cfg.clone() }, 2).unwrap();
        assert!(report.loss_rows.iter().all(|r| r.student == 2 && r.branch == Branch::Range));
        assert_eq!(report.branch_fractions, vec![1.0]);
        assert_eq!(report.nets[1].role, "student_2");
        assert!(train_range_student(&teacher, &cfg, 5).is_err());
    }

    #[test]
    fn branch_statistics() {
        let cfg = TrainConfig { iterations: 200, p: 0.0, ..tiny() };
        let (teacher, _) = train_teacher(&TrainConfig { iterations: 1, ..cfg.clone() }).unwrap();
        let (_, r0) = train_o2mkd(&teacher, &cfg).unwrap();
        assert!(r0.branch_fractions.iter().all(|f| *f == 0.0));
        let (_, r1) = train_o2mkd(&teacher, &TrainConfig { p: 1.0, ..cfg }).unwrap();
        assert!(r1.branch_fractions.iter().all(|f| *f == 1.0));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let cfg = tiny();
        let (teacher, _) = train_teacher(&cfg).unwrap();
        let other = TrainConfig { teacher_hidden: vec![32, 32, 32], ..cfg };
        assert!(matches!(train_o2okd(&teacher, &other), Err(Error::ArchitectureMismatch(_))));
    }

    #[test]
    fn report_json_round_trip() {
        let cfg = tiny();
        let (teacher, _) = train_teacher(&cfg).unwrap();
        let (group, mut report) = train_o2mkd(&teacher, &cfg).unwrap();
        report.metrics = Some(evaluate_model(&group, &cfg).unwrap());
        let text = serde_json::to_string(&report).unwrap();
        let mut back: RunReport = serde_json::from_str(&text).unwrap();
        back.loss_rows = report.loss_rows.clone();
        assert_eq!(back, report);
    }
}

use cmkt::dataset::{generate_synthetic, split_dataset, DatasetSplit, SyntheticConfig};
use cmkt::models::{build_model, layer::*, ArchitectureSpec, TrainableModel};
use cmkt::training::*;

fn data(n: usize, seed: u64) -> DatasetSplit {
    let cfg = SyntheticConfig { n_samples: n, seed, ..Default::default() };
    split_dataset(generate_synthetic(&cfg).unwrap(), (8, 1, 1), seed).unwrap()
}

/// Tiny smooth encoder on 80x80 inputs: 52 + 264 = 316 parameters.
fn tiny_encoder(seed: u64) -> TrainableModel {
    let spec = ArchitectureSpec::new(
        vec![1, 80, 80],
        vec![conv(2, 5, 5, 0), act("tanh"), maxpool(4), flatten(), dense(8), act("tanh")],
    );
    build_model(&spec, seed).unwrap()
}

fn tiny_classifier(dim: usize, seed: u64) -> TrainableModel {
    build_model(&ArchitectureSpec::new(vec![dim], vec![dense(1), act("sigmoid")]), seed).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig { learning_rate: 0.01, weight_decay: 0.0, epochs: 3, batch_size: 16, ..Default::default() }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-300)
}

#[test]
fn ccsa_encoder_gradient_matches_central_differences() {
    let split = data(40, 3);
    let batch = AlignmentBatch::from_samples(&split.train[..12]);
    let enc = tiny_encoder(5);
    assert!(enc.param_count() <= 500);
    let mut t = AlignmentTrainer::new(enc, tiny_classifier(8, 6), &cfg()).unwrap();
    let theta = t.encoder().flat_params();
    let (_, g) = t.ccsa_gradient(&batch).unwrap();
    let h = 1e-6;
    let mut fd = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] = theta[i] + h;
        t.set_encoder_params(&p).unwrap();
        let up = t.ccsa_gradient(&batch).unwrap().0;
        p[i] = theta[i] - h;
        t.set_encoder_params(&p).unwrap();
        let down = t.ccsa_gradient(&batch).unwrap().0;
        fd[i] = (up - down) / (2.0 * h);
    }
    let e = rel_err(&g, &fd);
    assert!(e < 1e-4, "relative error {e:e}");
}

#[test]
fn alignment_steps_touch_only_their_own_network() {
    let split = data(40, 1);
    let batch = AlignmentBatch::from_samples(&split.train[..16]);
    let mut t = AlignmentTrainer::new(tiny_encoder(1), tiny_classifier(8, 2), &cfg()).unwrap();

    let (e0, c0) = (t.encoder().flat_params(), t.classifier().flat_params());
    t.step_classifier(&batch).unwrap();
    let (e1, c1) = (t.encoder().flat_params(), t.classifier().flat_params());
    assert_eq!(e0, e1, "classifier step moved the encoder");
    assert_ne!(c0, c1);

    t.step_encoder(&batch).unwrap();
    let (e2, c2) = (t.encoder().flat_params(), t.classifier().flat_params());
    assert_eq!(c1, c2, "encoder step moved the classifier");
    assert_ne!(e1, e2);
}

#[test]
fn fsl_phases_leave_frozen_parts_untouched() {
    let split = data(60, 2);
    let source = build_model(
        &ArchitectureSpec::new(
            vec![1, 80, 80],
            vec![conv(2, 5, 5, 0), relu(), maxpool(4), flatten(), dense(4), tagged(batchnorm(), "hidden"), dense(1), act("sigmoid")],
        ),
        1,
    )
    .unwrap();
    let mapping = build_model(&ArchitectureSpec::new(vec![1, 80, 80], vec![conv(2, 5, 5, 0), relu(), maxpool(4), flatten(), dense(4)]), 2).unwrap();
    let head = tiny_classifier(4, 3);
    let c = cfg();
    let mut p = FslPipeline::new(Direction::A2v, source, mapping, head, "hidden", [c.clone(), c.clone(), c]).unwrap();
    assert!(p.run_phase2(&split.train).is_err(), "phase 2 before phase 1");

    p.run_phase1(&split.train).unwrap();
    let snap = |p: &FslPipeline| (p.source().flat_params(), p.source().flat_buffers(), p.mapping().flat_params());
    let (s1, b1, m1) = snap(&p);
    p.run_phase2(&split.train).unwrap();
    let (s2, b2, m2) = snap(&p);
    assert_eq!((&s1, &b1), (&s2, &b2), "phase 2 changed the source classifier");
    assert_ne!(m1, m2);
    p.run_phase3(&split.train).unwrap();
    let (s3, b3, m3) = snap(&p);
    assert_eq!((s2, b2, m2), (s3, b3, m3), "phase 3 changed a frozen network");
    let (model, hist) = p.finish().unwrap();
    assert_eq!(hist.len(), 3);
    assert_eq!(model.head.input_shape(), [4]);
}

#[test]
fn training_is_deterministic_given_seed() {
    let split = data(50, 4);
    let run = || {
        let r = train_semantic_alignment(&split, tiny_encoder(9), tiny_classifier(8, 10), &cfg(), &SnapshotOptions::default()).unwrap();
        (r.encoder.flat_params(), r.classifier.flat_params(), r.history.losses())
    };
    assert_eq!(run(), run());
}

#[test]
fn alignment_loss_trends_down() {
    let split = data(120, 5);
    let c = TrainConfig { epochs: 12, learning_rate: 0.005, ..cfg() };
    let r = train_semantic_alignment(&split, tiny_encoder(11), tiny_classifier(8, 12), &c, &SnapshotOptions::default()).unwrap();
    let losses = r.history.losses();
    assert_eq!(losses.len(), 12);
    let mut ema = losses[0];
    let mut smoothed = vec![];
    for l in &losses {
        ema = 0.7 * ema + 0.3 * l;
        smoothed.push(ema);
    }
    assert!(smoothed.last().unwrap() < &smoothed[0], "{losses:?}");
}

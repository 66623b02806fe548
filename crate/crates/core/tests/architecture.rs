use hrcae_core::nets::{ArchConfig, Cae, CaeConfig, Cnn, CnnConfig, Family, Network};
use hrcae_core::segment::{Label, Provenance, Segment, SegmentSet, SEGMENT_LEN};
use hrcae_core::date::Day;
use hrcae_core::tensor::{Graph, Mode, Tensor};
use hrcae_core::train::{evaluate_loss, train, LossKind, Model, Stage, TrainSchedule};

fn maps(n: usize) -> Tensor<f32> {
    let data = (0..n * SEGMENT_LEN).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
    Tensor::new(vec![n, 1, 24, 168], data).unwrap()
}

#[test]
fn cnn_emits_two_logits_at_every_depth() {
    for depth in 1..=6 {
        let mut net = Cnn::<f32>::new(CnnConfig { num_layers: depth, width_divisor: 1, fc_hidden: 100 }, 1).unwrap();
        let mut g = Graph::inference();
        let b = net.bind(&mut g);
        let x = g.input(maps(2));
        let y = net.forward(&mut g, &b, x, Mode::Train).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 2], "depth {depth}");
    }
}

#[test]
fn cae_reconstructs_the_input_shape_at_every_depth() {
    for depth in 1..=6 {
        let mut net = Cae::<f32>::new(CaeConfig { num_layers: depth, latent_dim: Some(100), width_divisor: 1 }, 1).unwrap();
        let mut g = Graph::inference();
        let b = net.bind(&mut g);
        let x = g.input(maps(2));
        let (z, r) = net.forward(&mut g, &b, x, Mode::Train).unwrap();
        assert_eq!(g.value(z).shape(), &[2, 100]);
        assert_eq!(g.value(r).shape(), &[2, 1, 24, 168], "depth {depth}");
    }
}

#[test]
fn four_layer_encoder_flattens_to_1792() {
    let net = Cae::<f32>::new(CaeConfig::default(), 1).unwrap();
    assert_eq!(net.flatten_len(), 256 * 7);
    let cnn = Cnn::<f32>::new(CnnConfig { num_layers: 4, ..CnnConfig::default() }, 1).unwrap();
    assert_eq!(cnn.spatial_trace(), vec![(24, 168), (12, 84), (6, 42), (3, 21), (1, 7)]);
}

#[test]
fn wrong_input_shape_is_a_shape_error() {
    let mut net = Cnn::<f32>::new(CnnConfig::default(), 1).unwrap();
    let mut g = Graph::inference();
    let b = net.bind(&mut g);
    let x = g.input(Tensor::zeros(vec![1, 1, 24, 100]));
    assert!(matches!(net.forward(&mut g, &b, x, Mode::Train), Err(hrcae_core::Error::Shape { .. })));
}

#[test]
fn eval_mode_before_any_training_step_is_rejected() {
    let mut net = Cae::<f32>::new(CaeConfig { num_layers: 1, latent_dim: Some(4), width_divisor: 8 }, 1).unwrap();
    let mut g = Graph::inference();
    let b = net.bind(&mut g);
    let x = g.input(maps(1));
    assert_eq!(net.forward(&mut g, &b, x, Mode::Eval).err(), Some(hrcae_core::Error::UninitializedStats));
}

#[test]
fn single_example_overfits() {
    let values: Vec<f32> = (0..SEGMENT_LEN).map(|i| 60.0 + 10.0 * ((i % 288) as f32 / 288.0)).collect();
    let seg = Segment {
        participant_id: "p".into(),
        start_day: Day(0),
        values,
        label: Label::Asymptomatic,
        shift_days: 0,
        completeness: 1.0,
    };
    let mut set = SegmentSet::new(Provenance::Pretrain);
    // batch norm needs two rows; both rows are the same example
    set.push(seg.clone());
    set.push(seg);
    let mut arch = ArchConfig::new(Family::Cae, 2);
    arch.width_divisor = 8;
    arch.latent_dim = Some(16);
    let mut model = Model::<f32>::new(&arch, 3).unwrap();
    let schedule = TrainSchedule { max_epochs: 200, lr_init: 1e-2, batch_size: 2, ..TrainSchedule::default() };
    let trace = train(&mut model, &set, &schedule, LossKind::Rmse, 3, Stage::Pretrain).unwrap();
    assert_eq!(trace.len(), 200);
    let err = evaluate_loss(&mut model, &set, LossKind::Rmse, 2).unwrap();
    assert!(err < 0.05, "rmse {err}");
}

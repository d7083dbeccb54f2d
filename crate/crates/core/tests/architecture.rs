use facedepth_core::autodiff::BnMode;
use facedepth_core::nn::{LayerShape, ParamRole};
use facedepth_core::{Discriminator, Generator, Network, Siamese, Tape, Tensor, WidthMultiplier};

fn extents(trace: &[LayerShape]) -> Vec<(String, usize, usize)> {
    trace
        .iter()
        .filter(|l| l.shape.len() == 4)
        .map(|l| (l.layer.clone(), l.shape[1], l.shape[2]))
        .collect()
}

fn input() -> Tensor<f32> {
    Tensor::zeros(&[1, 1, 96, 96])
}

#[test]
fn full_size_generator_shapes() {
    let mut g = Generator::<f32>::new(WidthMultiplier::FULL, 96).unwrap();
    let mut t = Tape::new();
    let b = g.store().bind(&mut t, false);
    let x = t.constant(input());
    let (y, trace) = g.forward_traced(&mut t, &b, x, BnMode::Eval).unwrap();
    let sides: Vec<usize> = extents(&trace).iter().map(|e| e.2).collect();
    assert_eq!(sides, [48, 24, 12, 6, 12, 24, 48, 96, 96]);
    let channels: Vec<usize> = extents(&trace).iter().map(|e| e.1).collect();
    assert_eq!(channels, [128, 256, 512, 1024, 512, 256, 128, 64, 1]);
    assert_eq!(t.value(y).shape(), &[1, 1, 96, 96]);
}

#[test]
fn full_size_discriminator_shapes() {
    let mut d = Discriminator::<f32>::new(WidthMultiplier::FULL, 96).unwrap();
    assert_eq!(d.fc_inputs(), 36864);
    let mut t = Tape::new();
    let b = d.store().bind(&mut t, false);
    let x = t.constant(input());
    let (p, trace) = d.forward_traced(&mut t, &b, x, BnMode::Eval).unwrap();
    let sides: Vec<usize> = extents(&trace).iter().map(|e| e.2).collect();
    assert_eq!(sides, [48, 24, 12, 6]);
    assert_eq!(trace.iter().find(|l| l.layer == "flatten").unwrap().shape, [1, 36864]);
    assert_eq!(t.value(p).shape(), &[1, 1]);
}

#[test]
fn full_size_siamese_tower_shapes() {
    let mut s = Siamese::<f32>::new(WidthMultiplier::FULL, 96).unwrap();
    let mut t = Tape::new();
    let b = s.store().bind(&mut t, false);
    let x = t.constant(input());
    let trace = s.tower_traced(&mut t, &b, x, BnMode::Eval).unwrap();
    let sides: Vec<usize> = extents(&trace).iter().map(|e| e.2).collect();
    assert_eq!(sides, [48, 24, 12, 6, 3, 1]);
    assert_eq!(trace.last().unwrap().shape, [1, 256]);
    assert_eq!(s.embedding_len(), 256);
}

#[test]
fn discriminator_encoder_matches_generator_encoder() {
    for m in WidthMultiplier::ALLOWED {
        let m = WidthMultiplier::new(m).unwrap();
        let g = Generator::<f32>::new(m, 32).unwrap();
        let d = Discriminator::<f32>::new(m, 32).unwrap();
        let shapes = |ps: &[facedepth_core::nn::Param<f32>]| -> Vec<(String, Vec<usize>)> {
            ps.iter()
                .filter(|p| p.name.starts_with("enc"))
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .collect()
        };
        let gs = shapes(&g.store().params);
        assert_eq!(gs.len(), 16);
        assert_eq!(gs, shapes(&d.store().params));
    }
}

#[test]
fn parameter_counts_are_stable() {
    let count = || Generator::<f32>::new(WidthMultiplier::FULL, 96).unwrap().store().param_count();
    assert_eq!(count(), count());
    assert_eq!(count(), 34_624_641);
    assert_eq!(Discriminator::<f32>::new(WidthMultiplier::FULL, 96).unwrap().store().param_count(), 17_249_025);
}

#[test]
fn initialization_statistics_and_reproducibility() {
    let m = WidthMultiplier::new(0.25).unwrap();
    let a = Generator::<f64>::seeded(m, 32, 7).unwrap();
    let b = Generator::<f64>::seeded(m, 32, 7).unwrap();
    let c = Generator::<f64>::seeded(m, 32, 8).unwrap();
    assert_eq!(a.param_hash(), b.param_hash());
    assert_ne!(a.param_hash(), c.param_hash());
    let slab = a.store().params.iter().find(|p| p.role == ParamRole::Weight && p.value.numel() >= 1024).unwrap();
    let v = &slab.value.data()[..1024];
    let mean = v.iter().sum::<f64>() / 1024.0;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1023.0).sqrt();
    assert!((0.015..=0.025).contains(&std), "{std}");
    for p in &a.store().params {
        match p.role {
            ParamRole::Bias | ParamRole::NormShift => assert!(p.value.data().iter().all(|&x| x == 0.0)),
            ParamRole::NormScale => assert!(p.value.data().iter().all(|&x| (x - 1.0).abs() < 0.15)),
            ParamRole::Weight => {}
        }
    }
}

use hsicgru::dataset::{PaddedBatch, Sequence};
use hsicgru::hsic::BandwidthPolicy;
use hsicgru::numerics::Rng;
use hsicgru::recurrent::{CellKind, Network};
use hsicgru::training::{central_differences, composite_loss};
use proptest::prelude::*;

fn batch(rng: &mut Rng, lengths: &[usize], dim: usize) -> PaddedBatch {
    let seqs: Vec<Sequence> = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| Sequence {
            cycle_index: i,
            dim,
            values: (0..len * dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            label: rng.uniform(0.5, 1.5),
        })
        .collect();
    let refs: Vec<&Sequence> = seqs.iter().collect();
    PaddedBatch::from_sequences(&refs).unwrap()
}

fn check_gradient(kind: CellKind, beta: Option<f64>, policy: BandwidthPolicy, seed: u64) {
    let mut rng = Rng::new(seed);
    let net = Network::init(kind, 3, 2, 3, &mut rng).unwrap();
    let b = batch(&mut rng, &[5, 2, 8, 3, 6, 4], 3);
    let analytic = composite_loss(&net, &b, beta, policy).unwrap().grads.flat_params();
    let numeric = central_differences(&net.flat_params(), 1e-5, |p| {
        let mut probe = net.clone();
        probe.set_flat_params(p).unwrap();
        composite_loss(&probe, &b, beta, policy).unwrap().loss
    });
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        assert!(rel <= 1e-4, "{kind} beta {beta:?} {policy:?} param {i}: analytic {a} numeric {n}");
    }
}

#[test]
fn full_objective_gradients_median_bandwidth() {
    for kind in CellKind::ALL {
        for beta in [None, Some(0.0), Some(0.001), Some(2.0)] {
            for seed in [11, 12] {
                check_gradient(kind, beta, BandwidthPolicy::MedianHeuristic, seed);
            }
        }
    }
}

#[test]
fn full_objective_gradients_fixed_bandwidth() {
    for kind in CellKind::ALL {
        check_gradient(kind, Some(2.0), BandwidthPolicy::Fixed(0.7), 21);
    }
}

#[test]
fn hsic_term_changes_gradients() {
    let mut rng = Rng::new(5);
    let net = Network::init(CellKind::Gru, 3, 2, 3, &mut rng).unwrap();
    let b = batch(&mut rng, &[5, 2, 8, 3, 6, 4], 3);
    let policy = BandwidthPolicy::MedianHeuristic;
    let plain = composite_loss(&net, &b, None, policy).unwrap();
    let heavy = composite_loss(&net, &b, Some(2.0), policy).unwrap();
    assert!(heavy.loss > plain.loss);
    assert_ne!(plain.grads.flat_params(), heavy.grads.flat_params());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn padding_never_changes_outputs_or_gradients(
        seed in any::<u64>(),
        kind in prop::sample::select(CellKind::ALL.to_vec()),
        lengths in prop::collection::vec(1usize..9, 4..8),
        extra in 1usize..=10,
    ) {
        let mut rng = Rng::new(seed);
        let net = Network::init(kind, 2, 2, 2, &mut rng).unwrap();
        let b = batch(&mut rng, &lengths, 2);
        let policy = BandwidthPolicy::MedianHeuristic;
        let base = composite_loss(&net, &b, Some(0.5), policy).unwrap();
        let padded = composite_loss(&net, &b.with_extra_padding(extra), Some(0.5), policy).unwrap();
        for (x, y) in base.predictions.iter().zip(&padded.predictions) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in base.grads.flat_params().iter().zip(padded.grads.flat_params()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

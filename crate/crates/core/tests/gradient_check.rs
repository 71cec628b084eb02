use rand::Rng as _;
use windvis_core::lstm::{backward, forward, predict};
use windvis_core::{FeatureSequence, LstmConfig, LstmNetwork, Rng};

fn random_seq(rng: &mut Rng, d: usize, t: usize) -> FeatureSequence {
    let v = (0..d * t).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureSequence::new(d, t, v).unwrap()
}

fn setup(seed: u64, use_bias: bool) -> (LstmNetwork, FeatureSequence) {
    let config = LstmConfig {
        input_size: 3,
        hidden_size: 4,
        num_layers: 2,
        use_bias,
    };
    let mut rng = Rng::new(seed);
    let net = LstmNetwork::new(config, &mut rng).unwrap();
    let seq = random_seq(&mut rng, 3, 5);
    (net, seq)
}

fn analytic(net: &LstmNetwork, seq: &FeatureSequence) -> Vec<f64> {
    let (_, cache) = forward(net, seq).unwrap();
    backward(net, &cache, 1.0).unwrap().0
}

fn central(net: &LstmNetwork, seq: &FeatureSequence, eps: f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.params().len())
        .map(|i| {
            let p0 = net.params()[i];
            probe.params_mut()[i] = p0 + eps;
            let up = predict(&probe, seq).unwrap();
            probe.params_mut()[i] = p0 - eps;
            let down = predict(&probe, seq).unwrap();
            probe.params_mut()[i] = p0;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    norm(a.iter().zip(b).map(|(x, y)| x - y))
}

#[test]
fn bptt_matches_central_differences() {
    for use_bias in [true, false] {
        for seed in 0..10 {
            let (net, seq) = setup(seed, use_bias);
            let a = analytic(&net, &seq);
            let fd = central(&net, &seq, 1e-5);
            let rel = diff_norm(&a, &fd) / norm(a.iter().copied());
            assert!(rel < 1e-6, "seed {seed} bias {use_bias}: {rel:e}");
        }
    }
}

// A wrong derivative leaves an O(1) residual; a correct one shrinks like ε².
#[test]
fn discrepancy_shrinks_quadratically() {
    for seed in 0..10 {
        let (net, seq) = setup(seed, true);
        let a = analytic(&net, &seq);
        let coarse = diff_norm(&a, &central(&net, &seq, 1e-3));
        let fine = diff_norm(&a, &central(&net, &seq, 1e-4));
        let ratio = coarse / fine;
        assert!((50.0..200.0).contains(&ratio), "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn large_gradients_match_per_parameter() {
    for seed in 0..10 {
        let (net, seq) = setup(seed, true);
        let a = analytic(&net, &seq);
        let fd = central(&net, &seq, 1e-5);
        for (i, (x, y)) in a.iter().zip(&fd).enumerate() {
            if x.abs() > 1e-4 {
                let r = (x - y).abs() / (x.abs() + y.abs() + 1e-12);
                assert!(r < 1e-6, "seed {seed} param {i}: {r:e}");
            }
        }
    }
}

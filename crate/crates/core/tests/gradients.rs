//! Analytic gradients against central finite differences, the batched
//! forward pass against a straight-line evaluator, and Adam against the
//! textbook update.

mod oracles;

use rand::Rng;
use wakd_core::loss::{hard_label_grad, hard_label_loss, kd_loss, kd_loss_grad};
use wakd_core::nn::{
    backward_f64, forward_f64, Activation, AdamConfig, AdamState, ArchSpec, Matrix, ParamVector,
};
use wakd_core::seed;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
// Components whose gradient is this small are compared absolutely.
const FLOOR: f64 = 1e-6;

fn random_arch<R: Rng>(rng: &mut R, activation: Activation) -> ArchSpec {
    let input = rng.random_range(1..=4);
    let depth = rng.random_range(0..=2);
    let mut widths = vec![input];
    for _ in 0..depth {
        widths.push(rng.random_range(1..=6));
    }
    widths.push(rng.random_range(2..=5));
    ArchSpec::from_widths(&widths, activation).unwrap()
}

fn random_batch<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, oracles::random_vec(rng, rows * cols, scale)).unwrap()
}

#[test]
fn kd_loss_grad_matches_finite_differences() {
    let mut rng = seed::rng(11, &[]);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let tau = if case % 2 == 0 { 1.0 } else { 5.0 };
        let c = rng.random_range(2..=8);
        let z_s = oracles::random_vec(&mut rng, c, 6.0);
        let z_t = oracles::random_vec(&mut rng, c, 6.0);
        let analytic = kd_loss_grad(&z_s, &z_t, tau).unwrap();
        let numeric = oracles::central_diff(|z| kd_loss(z, &z_t, tau).unwrap(), &z_s, H);
        worst = worst.max(oracles::max_rel_error(&analytic, &numeric, FLOOR));
    }
    assert!(worst < TOL, "max relative error {worst:e}");
}

#[test]
fn hard_label_grad_matches_finite_differences() {
    let mut rng = seed::rng(12, &[]);
    for _ in 0..100 {
        let c = rng.random_range(2..=8);
        let z = oracles::random_vec(&mut rng, c, 6.0);
        let label = rng.random_range(0..c);
        let analytic = hard_label_grad(&z, label).unwrap();
        let numeric = oracles::central_diff(|z| hard_label_loss(z, label).unwrap(), &z, H);
        let err = oracles::max_rel_error(&analytic, &numeric, FLOOR);
        assert!(err < TOL, "relative error {err:e}");
    }
}

/// Mean KD loss over a batch, as a function of the flat parameters.
fn batch_kd(arch: &ArchSpec, params: &[f64], x: &Matrix, teacher: &Matrix, tau: f64) -> f64 {
    let logits = forward_f64(arch, params, x).unwrap();
    let total: f64 = (0..x.rows())
        .map(|i| kd_loss(logits.row(i), teacher.row(i), tau).unwrap())
        .sum();
    total / x.rows() as f64
}

#[test]
fn network_backward_matches_finite_differences() {
    let mut rng = seed::rng(13, &[]);
    let mut worst: f64 = 0.0;
    for case in 0..120 {
        let tau = if case % 2 == 0 { 1.0 } else { 5.0 };
        let arch = random_arch(&mut rng, Activation::Tanh);
        let params = oracles::random_vec(&mut rng, arch.param_count(), 1.0);
        let b = rng.random_range(1..=5);
        let x = random_batch(&mut rng, b, arch.input_dim, 2.0);
        let teacher = random_batch(&mut rng, b, arch.num_classes, 4.0);

        let logits = forward_f64(&arch, &params, &x).unwrap();
        let mut dlogits = Matrix::zeros(b, arch.num_classes);
        for i in 0..b {
            let g = kd_loss_grad(logits.row(i), teacher.row(i), tau).unwrap();
            for (d, g) in dlogits.row_mut(i).iter_mut().zip(g) {
                *d = g / b as f64;
            }
        }
        let analytic = backward_f64(&arch, &params, &x, &dlogits).unwrap();
        let numeric =
            oracles::central_diff(|p| batch_kd(&arch, p, &x, &teacher, tau), &params, H);
        worst = worst.max(oracles::max_rel_error(&analytic, &numeric, FLOOR));
    }
    assert!(worst < TOL, "max relative error {worst:e}");
}

#[test]
fn relu_backward_matches_finite_differences_away_from_kinks() {
    let mut rng = seed::rng(14, &[]);
    let mut checked = 0;
    while checked < 50 {
        let arch = random_arch(&mut rng, Activation::Relu);
        let params = oracles::random_vec(&mut rng, arch.param_count(), 1.0);
        let x = random_batch(&mut rng, 3, arch.input_dim, 2.0);
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..arch.num_classes)).collect();
        let loss = |p: &[f64]| {
            let z = forward_f64(&arch, p, &x).unwrap();
            (0..3).map(|i| hard_label_loss(z.row(i), labels[i]).unwrap()).sum::<f64>()
        };
        // Perturbations of ±H cannot cross a kink if every pre-activation
        // sits comfortably away from zero.
        if near_kink(&arch, &params, &x) {
            continue;
        }
        let z = forward_f64(&arch, &params, &x).unwrap();
        let mut dlogits = Matrix::zeros(3, arch.num_classes);
        for (i, &label) in labels.iter().enumerate() {
            dlogits.row_mut(i).copy_from_slice(&hard_label_grad(z.row(i), label).unwrap());
        }
        let analytic = backward_f64(&arch, &params, &x, &dlogits).unwrap();
        let numeric = oracles::central_diff(loss, &params, H);
        let err = oracles::max_rel_error(&analytic, &numeric, FLOOR);
        assert!(err < TOL, "relative error {err:e}");
        checked += 1;
    }
}

fn near_kink(arch: &ArchSpec, params: &[f64], x: &Matrix) -> bool {
    let widths = arch.widths();
    for hidden in 1..widths.len() - 1 {
        // Pre-activations of layer `hidden` are the logits of the network
        // cut off just after it.
        let cut: usize = arch.layers()[..hidden].iter().map(|(i, o)| i * o + o).sum();
        for i in 0..x.rows() {
            let pre = oracles::mlp_forward(&widths[..=hidden], true, &params[..cut], x.row(i));
            if pre.iter().any(|v| v.abs() < 1e-2) {
                return true;
            }
        }
    }
    false
}

#[test]
fn batched_forward_matches_straight_line_evaluator() {
    let mut rng = seed::rng(15, &[]);
    for case in 0..100 {
        let activation = if case % 3 == 0 { Activation::Relu } else { Activation::Tanh };
        let arch = random_arch(&mut rng, activation);
        let params = oracles::random_vec(&mut rng, arch.param_count(), 1.5);
        let x = random_batch(&mut rng, 4, arch.input_dim, 3.0);
        let batched = forward_f64(&arch, &params, &x).unwrap();
        for i in 0..4 {
            let expected = oracles::mlp_forward(
                &arch.widths(),
                activation == Activation::Relu,
                &params,
                x.row(i),
            );
            for (a, e) in batched.row(i).iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }
}

#[test]
fn adam_tracks_textbook_update_for_100_steps() {
    let mut rng = seed::rng(16, &[]);
    let n = 40;
    let lr = 1e-3;
    let start: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let mut params = ParamVector::new(start.clone());
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(lr), n);
    let mut reference: Vec<f64> = start.iter().map(|&v| v as f64).collect();
    let mut textbook = oracles::TextbookAdam::new(lr, n);
    for _ in 0..100 {
        let g = oracles::random_vec(&mut rng, n, 2.0);
        adam.step(&mut params, &g).unwrap();
        textbook.step(&mut reference, &g);
    }
    assert_eq!(adam.step_count(), 100);
    // Parameters are stored in f32, so each step rounds once.
    for (a, e) in params.as_slice().iter().zip(&reference) {
        assert!((*a as f64 - e).abs() < 1e-5, "{a} vs {e}");
    }
}

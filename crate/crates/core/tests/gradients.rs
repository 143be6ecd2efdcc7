use clipbound::models::{batch_loss, init_params, per_sample_loss_grads, sample_loss};
use clipbound::{Matrix, ModelSpec, ModelState, Rng};

const STEP: f64 = 1e-6;

fn central_difference(state: &ModelState, x: &[f64], y: usize) -> Vec<f64> {
    let mut probe = state.clone();
    (0..state.params.len())
        .map(|j| {
            let orig = probe.params[j];
            probe.params[j] = orig + STEP;
            let up = sample_loss(&probe, x, y);
            probe.params[j] = orig - STEP;
            let down = sample_loss(&probe, x, y);
            probe.params[j] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn check(spec: ModelSpec, seed: u64) {
    let mut rng = Rng::new(seed);
    for trial in 0..10 {
        let mut state = init_params(&spec, &mut rng).unwrap();
        for p in &mut state.params {
            *p += rng.uniform_range(-0.5, 0.5);
        }
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let y = rng.below(spec.num_classes.max(1));
        let features = Matrix::from_vec(1, spec.input_dim, x.clone()).unwrap();
        let analytic = per_sample_loss_grads(&state, &features, &[y]).unwrap();
        let numeric = central_difference(&state, &x, y);
        let err = relative_error(analytic.grads().row(0), &numeric);
        assert!(err < 1e-5, "{:?} trial {trial}: relative error {err}", spec.kind);
    }
}

#[test]
fn mean_estimator_matches_finite_differences() {
    check(ModelSpec::mean(), 1);
}

#[test]
fn logistic_matches_finite_differences() {
    check(ModelSpec::logistic(5), 2);
}

#[test]
fn softmax_matches_finite_differences() {
    check(ModelSpec::softmax(6, 4), 3);
}

#[test]
fn mlp_matches_finite_differences() {
    check(ModelSpec::mlp(7, 5, 3), 4);
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let mut rng = Rng::new(5);
    for spec in [ModelSpec::logistic(3), ModelSpec::softmax(3, 4), ModelSpec::mlp(3, 8, 4)] {
        let state = init_params(&spec, &mut rng).unwrap();
        let n = 25;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.standard_normal()).collect();
        let features = Matrix::from_vec(n, 3, data).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(spec.num_classes)).collect();
        let grads = per_sample_loss_grads(&state, &features, &labels).unwrap();
        let total = batch_loss(&state, &features, &labels).unwrap();
        assert!((total - grads.mean_loss()).abs() < 1e-12);
    }
}

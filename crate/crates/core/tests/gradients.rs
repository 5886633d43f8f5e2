//! Analytic gradients against central finite differences.

use cdu_core::autoencoder::{Autoencoder, FeatureScaler};
use cdu_core::linalg::Matrix;
use cdu_core::nn::{finite_diff_grad, relative_error, Activation, DenseNetwork};
use cdu_core::rng::derive_rng;
use cdu_core::unlearner::{objective_gradient, unlearn_objective, UnlearnMap};
use rand::Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn activation(i: usize) -> Activation {
    [Activation::Identity, Activation::Tanh, Activation::Relu][i % 3]
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert!(
            relative_error(*a, *n) <= TOL,
            "{what}[{i}]: analytic {a} vs numeric {n}"
        );
    }
}

#[test]
fn dense_network_backward_matches_finite_differences() {
    let mut rng = derive_rng(11, "gradcheck-nets");
    for case in 0..50 {
        let depth = rng.random_range(1..=3);
        let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=8)).collect();
        let mut net = DenseNetwork::random(&dims, activation(case), activation(case / 3), &mut rng).unwrap();
        // Random biases too: zero biases behind dead ReLUs put pre-activations
        // exactly on the kink.
        let p: Vec<f64> = net.to_flat().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_flat(&p).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..*dims.last().unwrap())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let weighted = |y: &[f64]| y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

        let (_, cache) = net.forward(&x).unwrap();
        let (grads, grad_in) = net.backward(&cache, &w).unwrap();

        let params = net.to_flat();
        let numeric = finite_diff_grad(
            |p| {
                let mut n = net.clone();
                n.set_flat(p)?;
                Ok(weighted(&n.predict(&x)?))
            },
            &params,
            STEP,
        )
        .unwrap();
        assert_close(&grads.to_flat(), &numeric, &format!("case {case} params"));

        let numeric_in = finite_diff_grad(|v| Ok(weighted(&net.predict(v)?)), &x, STEP).unwrap();
        assert_close(&grad_in, &numeric_in, &format!("case {case} input"));
    }
}

fn random_ae(rng: &mut impl Rng, d: usize, case: usize) -> Autoencoder {
    let latent = rng.random_range(1..d);
    let hidden = rng.random_range(latent..=8);
    let act = if case.is_multiple_of(2) {
        Activation::Tanh
    } else {
        Activation::Identity
    };
    let enc = DenseNetwork::random(&[d, hidden, latent], act, act, rng).unwrap();
    let dec = DenseNetwork::random(&[latent, hidden, d], act, Activation::Identity, rng).unwrap();
    let mean = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scale = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    Autoencoder::from_parts(enc, dec, FeatureScaler::new(mean, scale).unwrap())
        .unwrap()
        .freeze()
}

/// Random affine map whose outputs stay at least `1e-3` away from every
/// kink of the L1 term on `data`.
fn non_kink_map(rng: &mut impl Rng, data: &Matrix) -> UnlearnMap {
    let d = data.cols();
    loop {
        let mut a = Matrix::identity(d);
        for v in a.as_mut_slice() {
            *v += rng.random_range(-0.3..0.3);
        }
        let b = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let f = UnlearnMap::affine(a, b).unwrap();
        let clear = data.iter_rows().all(|x| {
            let u = f.apply(x).unwrap();
            u.iter().zip(x).all(|(p, q)| (p - q).abs() > 1e-3)
        });
        if clear {
            return f;
        }
    }
}

#[test]
fn unlearning_objective_gradient_matches_finite_differences() {
    let mut rng = derive_rng(12, "gradcheck-objective");
    for case in 0..50 {
        let d = rng.random_range(2..=5);
        let n = rng.random_range(1..=6);
        let ae = random_ae(&mut rng, d, case);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let f = non_kink_map(&mut rng, &data);
        let c = rng.random_range(0.0..1.0);

        let (value, grad) = objective_gradient(&ae, &f, &data, c).unwrap();
        assert!(relative_error(value, unlearn_objective(&ae, &f, &data, c).unwrap()) < 1e-12);
        let numeric = finite_diff_grad(
            |p| {
                let mut g = f.clone();
                g.set_params(p)?;
                unlearn_objective(&ae, &g, &data, c)
            },
            &f.params(),
            STEP,
        )
        .unwrap();
        assert_close(&grad, &numeric, &format!("case {case}"));
    }
}

#[test]
fn residual_and_shift_maps_gradients() {
    let mut rng = derive_rng(13, "gradcheck-kinds");
    for case in 0..10 {
        let d = 4;
        let ae = random_ae(&mut rng, d, case);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let mut mlp = UnlearnMap::residual_mlp(d, 6, case as u64).unwrap();
        let mut shift = UnlearnMap::shift(d).unwrap();
        // Move off the identity so no difference sits on an L1 kink.
        let p: Vec<f64> = mlp.params().iter().map(|v| v + rng.random_range(0.2..0.4)).collect();
        mlp.set_params(&p).unwrap();
        shift.set_params(&[0.7, -0.6, 0.9, -0.8]).unwrap();
        for f in [mlp, shift] {
            let (_, grad) = objective_gradient(&ae, &f, &data, 0.3).unwrap();
            let numeric = finite_diff_grad(
                |p| {
                    let mut g = f.clone();
                    g.set_params(p)?;
                    unlearn_objective(&ae, &g, &data, 0.3)
                },
                &f.params(),
                STEP,
            )
            .unwrap();
            assert_close(&grad, &numeric, &format!("case {case} {:?}", f.kind()));
        }
    }
}

#[test]
fn autoencoder_input_gradient_matches_finite_differences() {
    let mut rng = derive_rng(14, "gradcheck-ae-input");
    for case in 0..20 {
        let d = rng.random_range(2..=6);
        let ae = random_ae(&mut rng, d, case);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (loss, grad) = ae.loss_input_gradient(&x).unwrap();
        assert!(relative_error(loss, ae.sample_loss(&x).unwrap()) < 1e-12);
        let numeric = finite_diff_grad(|v| ae.sample_loss(v), &x, STEP).unwrap();
        assert_close(&grad, &numeric, &format!("case {case}"));
    }
}

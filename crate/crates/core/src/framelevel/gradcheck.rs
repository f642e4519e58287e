use crate::linear::ParamTensors;
use crate::rng::SeededRng;

/// Minimum number of coordinates probed (all of them when there are fewer).
const MIN_COORDS: usize = 200;

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compare an analytic gradient with central differences.
///
/// `loss_grad` returns the loss and its gradient at a flat parameter vector.
/// A seeded subset of at least 200 coordinates is probed; the maximum relative
/// error over them is returned.
pub fn numeric_gradient_check<F>(loss_grad: F, params: &[f64], step: f64, seed: u64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_grad(params);
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let coords = if params.len() <= MIN_COORDS {
        (0..params.len()).collect()
    } else {
        SeededRng::new(seed).sample_indices(params.len(), MIN_COORDS)
    };
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = loss_grad(&probe).0;
        probe[i] = orig - step;
        let minus = loss_grad(&probe).0;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// [`numeric_gradient_check`] for a parameter bundle whose gradient has the
/// same type as the parameters.
pub fn check_model_gradient<P, F>(params: &P, loss_grad: F, step: f64, seed: u64) -> f64
where
    P: ParamTensors + Clone,
    F: Fn(&P) -> (f64, P),
{
    numeric_gradient_check(
        |flat| {
            let mut p = params.clone();
            p.assign_flat(flat);
            let (loss, grad) = loss_grad(&p);
            (loss, grad.flatten())
        },
        &params.flatten(),
        step,
        seed,
    )
}

//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use zsil_core::autodiff::{Graph, NodeId};
use zsil_core::Tensor;

pub const STEP: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;

/// Passes when either the absolute or the relative error is within bounds.
pub fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let abs = (analytic - numeric).abs();
    let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
    assert!(
        abs <= ABS_TOL || rel <= REL_TOL,
        "{what}: analytic {analytic} vs numeric {numeric} (abs {abs:e}, rel {rel:e})"
    );
}

/// Central difference at `STEP`, or `None` when it disagrees with the one at
/// `STEP / 2`, which happens when a ReLU kink falls inside the interval.
pub fn smooth_central_difference(f: &mut impl FnMut(f64) -> f64) -> Option<f64> {
    let wide = (f(STEP) - f(-STEP)) / (2.0 * STEP);
    let narrow = (f(STEP / 2.0) - f(-STEP / 2.0)) / STEP;
    let scale = wide.abs().max(narrow.abs());
    ((wide - narrow).abs() <= 0.1 * ABS_TOL || (wide - narrow).abs() <= 0.1 * REL_TOL * scale)
        .then_some(wide)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Compares `backward` against central differences on `probes` random
/// coordinates of every leaf. `build` receives the leaf ids in order and
/// returns the scalar loss node.
pub fn check_leaf_gradients<F>(
    leaves: &[(String, Tensor)],
    probes: usize,
    rng: &mut ChaCha8Rng,
    build: F,
) -> usize
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |values: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = leaves
            .iter()
            .zip(values)
            .map(|((name, _), v)| g.leaf(name.clone(), v.clone()).unwrap())
            .collect();
        let loss = build(&mut g, &ids);
        (g, loss)
    };
    let base: Vec<Tensor> = leaves.iter().map(|(_, t)| t.clone()).collect();
    let (g, loss) = eval(&base);
    let names: Vec<&str> = leaves.iter().map(|(n, _)| n.as_str()).collect();
    let grads = g.backward(loss, &names).unwrap();

    let mut checked = 0;
    for (li, (name, t)) in leaves.iter().enumerate() {
        let grad = grads.get(name).unwrap();
        assert_eq!(grad.shape(), t.shape());
        for _ in 0..probes {
            let i = rng.random_range(0..t.len());
            let mut shifted = |delta: f64| {
                let mut values = base.clone();
                let mut data = values[li].data().to_vec();
                data[i] += delta;
                values[li] = Tensor::new(t.shape().to_vec(), data).unwrap();
                let (g, loss) = eval(&values);
                g.value(loss).data()[0]
            };
            let numeric = smooth_central_difference(&mut shifted)
                .unwrap_or_else(|| panic!("{name}[{i}]: loss is not smooth around the probe"));
            assert_close(grad.data()[i], numeric, &format!("{name}[{i}]"));
            checked += 1;
        }
    }
    checked
}

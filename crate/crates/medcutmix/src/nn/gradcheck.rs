//! Central finite-difference validation of the reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Params};

/// Max over sampled coordinates of |g_ad − g_fd| / (|g_ad| + |g_fd| + 1e-12).
///
/// `build` constructs a fresh graph and scalar loss from the current
/// parameter values; `n_samples` coordinates are probed (all of them
/// when the parameter count is smaller).
pub fn grad_check<F>(
    mut build: F,
    params: &mut Params,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&Params) -> Result<(Graph, NodeId)>,
{
    let (graph, loss) = build(params)?;
    let loss_value = graph.value(loss).data[0];
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    params.zero_grads();
    graph.backward(loss, params)?;

    let total = params.n_scalars();
    let mut coords: Vec<usize> = (0..total).collect();
    if n_samples < total {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(n_samples);
    }

    let mut max_rel: f64 = 0.0;
    for &flat in &coords {
        let orig = params.get_flat(flat);
        params.set_flat(flat, orig + epsilon);
        let (g_hi, l_hi) = build(params)?;
        let hi = g_hi.value(l_hi).data[0];
        params.set_flat(flat, orig - epsilon);
        let (g_lo, l_lo) = build(params)?;
        let lo = g_lo.value(l_lo).data[0];
        params.set_flat(flat, orig);
        let fd = (hi - lo) / (2.0 * epsilon);
        let ad = params.grad_flat(flat);
        let rel = (ad - fd).abs() / (ad.abs() + fd.abs() + 1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    #[test]
    fn quadratic_loss_checks_exactly() {
        let mut params = Params::new();
        params.add("theta", Tensor::from_vec(&[1, 5], vec![0.3, -1.2, 0.0, 2.5, -0.7]).unwrap());
        let err = grad_check(
            |p| {
                let mut g = Graph::new();
                let th = g.named(p, "theta");
                let sq = g.mul(th, th);
                let half = g.input(Tensor::from_vec(&[5, 1], vec![0.5; 5]).unwrap());
                let loss = g.matmul(sq, half);
                Ok((g, loss))
            },
            &mut params,
            1e-5,
            5,
            0,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut params = Params::new();
        params.add("theta", Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let err = grad_check(
            |p| {
                let mut g = Graph::new();
                let th = g.named(p, "theta");
                let zero = g.scale(th, 0.0);
                let ones = g.input(Tensor::from_vec(&[3, 1], vec![1.0; 3]).unwrap());
                let loss = g.matmul(zero, ones);
                Ok((g, loss))
            },
            &mut params,
            1e-5,
            3,
            0,
        )
        .unwrap();
        assert!(err < 1e-12);
        for flat in 0..3 {
            assert_eq!(params.grad_flat(flat), 0.0);
        }
    }
}

//! Central finite-difference verification of tape gradients (64-bit).

use super::{Tape, Tensor, Var};
use crate::error::{ColoError, Result};

/// Gradient magnitude below which central differences are mostly rounding
/// noise; such entries are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a| + |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_FLOOR)
}

/// Max relative error between the tape gradient of scalar `f` at `at` and
/// central differences with step `eps`.
pub fn finite_diff_check<Fun>(f: Fun, at: &Tensor<f64>, eps: f64) -> Result<f64>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let per_input = finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(at), eps)?;
    Ok(per_input[0])
}

/// Like [`finite_diff_check`] over several inputs; returns the max relative
/// error per input.
pub fn finite_diff_check_many<Fun>(f: Fun, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<f64>>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::<f64>::new();
    let vars = inputs.iter().map(|t| tape.param(t)).collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(ColoError::Rank("finite_diff_check needs a scalar function".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().zip(inputs).map(|(&v, t)| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()])).collect();

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let vars = probe.iter().map(|t| tape.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = vec![0.0f64; inputs.len()];
    for (which, grad) in analytic.iter().enumerate() {
        for (coord, &a) in grad.iter().enumerate() {
            let orig = probe[which].data()[coord];
            probe[which].data_mut()[coord] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[coord] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst[which] = worst[which].max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_is_exact() {
        let x = random(vec![7], 1);
        let err = finite_diff_check(|t, v| t.sum(v), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn matmul_gradients() {
        let a = random(vec![3, 4], 2);
        let b = random(vec![4, 2], 3);
        let errs = finite_diff_check_many(
            |t, v| {
                let c = t.matmul(v[0], v[1])?;
                let c2 = t.mul(c, c)?;
                t.sum(c2)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn transposed_matmul_gradients() {
        let a = random(vec![4, 3], 4);
        let b = random(vec![2, 4], 5);
        let errs = finite_diff_check_many(
            |t, v| {
                let c = t.matmul_t(v[0], true, v[1], true)?; // (3x4)(4x2)
                let c2 = t.tanh(c)?;
                t.sum(c2)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn mean_pool_gradient() {
        let x = random(vec![5, 8], 6);
        let mask = [true, false, true, false, true];
        let err = finite_diff_check(
            |t, v| {
                let p = t.masked_mean_pool(v, &mask)?;
                t.sum(p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn cosine_gradient() {
        let u = random(vec![6], 7);
        let fixed = random(vec![6], 8);
        let err = finite_diff_check(
            |t, v| {
                let w = t.constant(fixed.clone())?;
                t.cosine_similarity(v, w)
            },
            &u,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = random(vec![6, 11], 9);
        let targets = [0, 3, 10, 5, 5, 2];
        let mask = [true, true, false, true, true, true];
        let err = finite_diff_check(|t, v| t.softmax_cross_entropy(v, &targets, &mask), &logits, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn layer_norm_gradient() {
        let x = random(vec![3, 5], 10);
        let g = random(vec![5], 11);
        let b = random(vec![5], 12);
        let w = random(vec![3, 5], 13);
        let errs = finite_diff_check_many(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2])?;
                let wc = t.constant(w.clone())?;
                let p = t.mul(y, wc)?;
                t.sum(p)
            },
            &[x, g, b],
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn attention_gradient_with_causal_and_padding() {
        let q = random(vec![4, 6], 14);
        let k = random(vec![5, 6], 15);
        let v = random(vec![5, 6], 16);
        let w = random(vec![4, 6], 17);
        let mask = super::super::AttnMask { keys: vec![true, true, true, true, false], causal: true };
        let errs = finite_diff_check_many(
            |t, vars| {
                let o = t.attention::<ChaCha8Rng>(vars[0], vars[1], vars[2], 2, &mask, None)?;
                let wc = t.constant(w.clone())?;
                let p = t.mul(o, wc)?;
                t.sum(p)
            },
            &[q, k, v],
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn elementwise_gradients() {
        let x = random(vec![2, 3], 18);
        let bias = random(vec![3], 19);
        let errs = finite_diff_check_many(
            |t, v| {
                let a = t.add_row(v[0], v[1])?;
                let b = t.gelu(a)?;
                let c = t.scale(b, 1.7)?;
                let d = t.sub(c, v[0])?;
                let e = t.add_scalar(d, 0.3)?;
                let f = t.mul(e, e)?;
                t.sum(f)
            },
            &[x, bias],
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn embedding_gradient() {
        let table = random(vec![5, 3], 20);
        let ids = [4, 0, 4, 2];
        let w = random(vec![4, 3], 21);
        let err = finite_diff_check(
            |t, v| {
                let e = t.embedding(v, &ids)?;
                let wc = t.constant(w.clone())?;
                let p = t.mul(e, wc)?;
                t.sum(p)
            },
            &table,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

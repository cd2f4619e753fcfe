//! Central finite-difference gradient checking.
//!
//! Independent of the reverse sweep except for the final comparison: the
//! numeric side only ever evaluates forward values.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a floor so near-zero gradients are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Compares analytic gradients of `build` with central differences of step `h`
/// for every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor]| forward(ins, &build);
    let analytic = analytic_gradients(inputs, &build);

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for ti in 0..inputs.len() {
        for ei in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + h;
            let plus = eval(&work);
            work[ti].data_mut()[ei] = orig - h;
            let minus = eval(&work);
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            max_rel_err = max_rel_err.max(rel_err(analytic[ti].data()[ei], numeric));
            checked += 1;
        }
    }
    GradCheckReport {
        max_rel_err,
        checked,
    }
}

fn forward<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item()
}

fn analytic_gradients<F>(inputs: &[Tensor], build: &F) -> Vec<Tensor>
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &vars);
    let g = tape.backward(loss).expect("scalar loss");
    vars.iter().map(|&v| g.wrt(v)).collect()
}

/// Compares directional derivatives along `directions` random unit vectors
/// with central differences of step `h`.
///
/// Suited to large networks: the directional derivative is on the scale of
/// the whole gradient, so it stays far above rounding error even when most
/// single partials are tiny, and each coordinate moves by only `h / sqrt(n)`.
pub fn check_directional<F, R>(inputs: &[Tensor], h: f64, directions: usize, rng: &mut R, build: F) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
    R: Rng + ?Sized,
{
    let analytic = analytic_gradients(inputs, &build);
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..directions {
        let mut dir: Vec<Tensor> = inputs.iter().map(|t| Tensor::randn(t.shape(), 1.0, rng)).collect();
        let norm = dir.iter().map(|d| d.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        for d in &mut dir {
            *d = d.map(|v| v / norm);
        }
        let shifted = |sign: f64| -> Vec<Tensor> {
            inputs.iter().zip(&dir).map(|(x, d)| x.zip_map(d, |a, b| a + sign * h * b)).collect()
        };
        let numeric = (forward(&shifted(1.0), &build) - forward(&shifted(-1.0), &build)) / (2.0 * h);
        let exact: f64 = analytic
            .iter()
            .zip(&dir)
            .map(|(g, d)| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        max_rel_err = max_rel_err.max(rel_err(exact, numeric));
    }
    GradCheckReport {
        max_rel_err,
        checked: directions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn directional_check_accepts_true_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2], 1.0, &mut rng);
        let rep = check_directional(&[x, w], 1e-5, 10, &mut rng, |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            let y = t.tanh(y);
            let y = t.square(y);
            t.sum(y)
        });
        assert_eq!(rep.checked, 10);
        assert!(rep.max_rel_err < 1e-7, "{rep:?}");
    }

    #[test]
    fn directional_check_sees_relu_kink() {
        // relu at exactly 0 has a one-sided derivative; a step straddling the
        // kink sees the average slope, the reverse sweep sees 0.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::zeros(&[6]);
        let rep = check_directional(&[x], 1e-5, 4, &mut rng, |t, v| {
            let y = t.relu(v[0]);
            t.sum(y)
        });
        assert!(rep.max_rel_err > 0.1, "{rep:?}");
    }
}

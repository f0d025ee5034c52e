//! Central finite-difference checking of tape gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

pub struct GradCheckOpts {
    /// Central-difference step.
    pub eps: f64,
    /// At most this many coordinates are probed (all if the tensor is smaller).
    pub max_coords: usize,
    /// Skip coordinates with |x| below this bound (kink points of relu-like
    /// ops make one-sided derivatives meaningless).
    pub exclude_abs_below: Option<f64>,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            eps: 1e-3,
            max_coords: 64,
            exclude_abs_below: None,
            seed: 0,
        }
    }
}

/// Runs `build` once with `point` as a parameter to get the analytic gradient,
/// then probes sampled coordinates with central differences.
///
/// Returns the max over probed coordinates of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
pub fn grad_check<F: Scalar>(
    build: impl Fn(&mut Tape<F>, NodeId) -> Result<NodeId>,
    point: &Tensor<F>,
    opts: &GradCheckOpts,
) -> Result<f64> {
    if opts.eps <= 0.0 {
        return Err(Error::arg("grad_check eps must be positive"));
    }

    let mut tape = Tape::new();
    let input = tape.param(point.clone());
    let loss = build(&mut tape, input)?;
    if tape.value(loss).numel() != 1 {
        return Err(Error::arg("grad_check target must be scalar-valued"));
    }
    if !tape.scalar_value(loss).is_finite() {
        return Err(Error::numeric("grad_check: non-finite value at base point"));
    }
    tape.backward(loss)?;
    let analytic: Vec<f64> = tape
        .grad(input)
        .expect("input is a param, grad present after backward")
        .iter()
        .map(|g| g.as_f64())
        .collect();

    let eval = |data: &[F]| -> Result<f64> {
        let mut t = Tape::new();
        let node = t.leaf(Tensor::from_vec(point.shape(), data.to_vec())?);
        let out = build(&mut t, node)?;
        let v = t.scalar_value(out).as_f64();
        if !v.is_finite() {
            return Err(Error::numeric("grad_check: non-finite value at probe point"));
        }
        Ok(v)
    };

    let mut coords: Vec<usize> = (0..point.numel())
        .filter(|&i| match opts.exclude_abs_below {
            Some(bound) => point.data()[i].as_f64().abs() >= bound,
            None => true,
        })
        .collect();
    if coords.len() > opts.max_coords {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        coords.shuffle(&mut rng);
        coords.truncate(opts.max_coords);
    }

    let mut max_rel = 0.0f64;
    let mut probe: Vec<F> = point.data().to_vec();
    for &i in &coords {
        let orig = probe[i];
        probe[i] = F::from_f64(orig.as_f64() + opts.eps);
        let plus = eval(&probe)?;
        probe[i] = F::from_f64(orig.as_f64() - opts.eps);
        let minus = eval(&probe)?;
        probe[i] = orig;

        let numeric = (plus - minus) / (2.0 * opts.eps);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

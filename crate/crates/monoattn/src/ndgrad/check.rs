//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::ndgrad::array::Array;
use crate::ndgrad::graph::{Graph, NodeId};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares the analytic gradient of a scalar-valued program against central
/// finite differences, one input coordinate at a time.
///
/// `build` must construct the loss from the given input node alone; the graph
/// is rebuilt for every perturbed evaluation. Returns the maximum relative
/// error `|analytic - numeric| / max(1e-8, |numeric|)` over all coordinates.
pub fn grad_check<F>(build: F, x: &Array, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps must be positive, got {}",
            eps
        )));
    }
    let eval = |data: &[f64]| -> Result<(f64, Option<Array>)> {
        let mut g = Graph::new();
        let input = g.leaf(Array::new(x.shape().to_vec(), data.to_vec())?)?;
        let loss = build(&mut g, input)?;
        let value = g.value(loss).scalar_value()?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "grad_check loss evaluation".to_string(),
            });
        }
        Ok((value, Some(g.backward(loss)?.get(input).clone())))
    };

    let (_, analytic) = eval(x.data())?;
    let analytic = analytic.expect("gradient requested");
    let mut max_rel = 0.0f64;
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = {
            let mut g = Graph::new();
            let input = g.leaf(Array::new(x.shape().to_vec(), probe.clone())?)?;
            let loss = build(&mut g, input)?;
            g.value(loss).scalar_value()?
        };
        probe[i] = orig - eps;
        let minus = {
            let mut g = Graph::new();
            let input = g.leaf(Array::new(x.shape().to_vec(), probe.clone())?)?;
            let loss = build(&mut g, input)?;
            g.value(loss).scalar_value()?
        };
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check perturbed evaluation at coordinate {}", i),
            });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic.data()[i] - numeric).abs() / f64::max(1e-8, numeric.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

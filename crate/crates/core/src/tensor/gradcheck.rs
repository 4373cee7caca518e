use std::collections::BTreeMap;

use crate::error::Result;

use super::{ParamSet, Tape, Var};

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all checked entries.
    pub max_rel_error: f64,
    pub per_param: BTreeMap<String, f64>,
    /// Op kinds the fragment exercised.
    pub op_kinds: Vec<&'static str>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn run<F>(params: &ParamSet, fragment: &F) -> Result<(Tape, Var)>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|(name, t)| (name.to_string(), tape.param(name, t.clone())))
        .collect();
    let loss = fragment(&mut tape, &vars)?;
    Ok((tape, loss))
}

/// Compares reverse-mode gradients of `fragment` against central finite
/// differences with step `h`, for every entry of every tensor in `params`.
///
/// The fragment receives the parameters already registered on the tape and
/// must return a scalar loss.
pub fn grad_check<F>(params: &ParamSet, h: f64, fragment: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    use super::Graph;

    let (tape, loss) = run(params, &fragment)?;
    let grads = tape.backward(loss)?;
    let op_kinds = tape.op_kinds();

    let eval = |p: &ParamSet| -> Result<f64> {
        let (t, l) = run(p, &fragment)?;
        Ok(t.value(&l).item())
    };

    let mut per_param = BTreeMap::new();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let mut param_worst: f64 = 0.0;
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(name).map_or(0.0, |g| g.data()[i]);
            param_worst = param_worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
        worst = worst.max(param_worst);
        per_param.insert(name.to_string(), param_worst);
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        per_param,
        op_kinds,
        checked,
    })
}
